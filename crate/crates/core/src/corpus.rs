//! Ride logs, station tables and fill snapshots.
//!
//! Rides and stations are read from and written to CSV with the column
//! layout of the public cycle-hire syndication feed. Snapshots use a small
//! JSON document. When no real data is available, [`generate_synthetic`]
//! produces a commuter-style corpus with the same shape.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{DayCalendar, DayType, MINUTES_PER_DAY};

pub type StationId = u32;

/// Journeys may start between 06:00 and midnight.
pub const SERVICE_START_MINUTE: u32 = 6 * 60;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unknown station id {id}")]
    UnknownStation { line: u64, id: StationId },
    #[error("line {line}: unparsable timestamp {value:?}")]
    BadTimestamp { line: u64, value: String },
    #[error("line {line}: ride ends before it starts")]
    EndBeforeStart { line: u64 },
    #[error("duplicate station id {0}")]
    DuplicateStation(StationId),
    #[error("station {0} has non-positive size")]
    InvalidSize(StationId),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Reference point for integer minute timestamps. Timestamps are local
/// civil time; no DST correction is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epoch(pub NaiveDateTime);

impl Default for Epoch {
    fn default() -> Self {
        Epoch(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap())
    }
}

impl Epoch {
    pub fn minutes(&self, t: NaiveDateTime) -> i64 {
        (t - self.0).num_minutes()
    }

    pub fn datetime(&self, minutes: i64) -> NaiveDateTime {
        self.0 + Duration::minutes(minutes)
    }

    pub fn parse(&self, text: &str) -> Option<i64> {
        NaiveDateTime::parse_from_str(text.trim(), TIMESTAMP_FORMAT)
            .ok()
            .map(|t| self.minutes(t))
    }

    pub fn format(&self, minutes: i64) -> String {
        self.datetime(minutes).format(TIMESTAMP_FORMAT).to_string()
    }

    /// Calendar day type of the day containing `minutes`.
    pub fn day_type(&self, minutes: i64) -> DayType {
        match self.datetime(minutes).weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }

    /// Minute of the civil day containing `minutes`.
    pub fn minute_of_day(&self, minutes: i64) -> usize {
        let offset = self.0.num_seconds_from_midnight() as i64 / 60;
        (minutes + offset).rem_euclid(MINUTES_PER_DAY as i64) as usize
    }

    /// Whole days since the epoch's midnight.
    pub fn day_index(&self, minutes: i64) -> i64 {
        let offset = self.0.num_seconds_from_midnight() as i64 / 60;
        (minutes + offset).div_euclid(MINUTES_PER_DAY as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RideRecord {
    pub bike_id: u64,
    pub start_time: i64,
    pub start_station: StationId,
    pub end_time: i64,
    pub end_station: StationId,
}

impl RideRecord {
    pub fn duration(&self) -> i64 {
        self.end_time - self.start_time
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub id: StationId,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub size: u32,
}

/// Validated station list with a dense index.
#[derive(Debug, Clone, PartialEq)]
pub struct StationTable {
    stations: Vec<StationRecord>,
    index: HashMap<StationId, usize>,
}

impl StationTable {
    pub fn new(stations: Vec<StationRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if s.size == 0 {
                return Err(CorpusError::InvalidSize(s.id));
            }
            if index.insert(s.id, i).is_some() {
                return Err(CorpusError::DuplicateStation(s.id));
            }
        }
        Ok(StationTable { stations, index })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn records(&self) -> &[StationRecord] {
        &self.stations
    }

    pub fn get(&self, idx: usize) -> &StationRecord {
        &self.stations[idx]
    }

    pub fn index_of(&self, id: StationId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn capacities(&self) -> Vec<u32> {
        self.stations.iter().map(|s| s.size).collect()
    }

    pub fn total_capacity(&self) -> u64 {
        self.stations.iter().map(|s| s.size as u64).sum()
    }
}

/// Docked bikes per station at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: i64,
    pub fill: BTreeMap<StationId, u32>,
}

impl Snapshot {
    pub fn total(&self) -> u64 {
        self.fill.values().map(|&f| f as u64).sum()
    }

    /// Check `0 ≤ fill ≤ size` and that every station is listed.
    pub fn validate(&self, stations: &StationTable) -> Result<(), CorpusError> {
        for (&id, &f) in &self.fill {
            let idx = stations
                .index_of(id)
                .ok_or_else(|| CorpusError::Snapshot(format!("unknown station {id}")))?;
            if f > stations.get(idx).size {
                return Err(CorpusError::Snapshot(format!(
                    "station {id} holds {f} bikes but has {} docks",
                    stations.get(idx).size
                )));
            }
        }
        if self.fill.len() != stations.len() {
            return Err(CorpusError::Snapshot("snapshot does not list every station".into()));
        }
        Ok(())
    }

    /// Fill levels in dense station order.
    pub fn dense(&self, stations: &StationTable) -> Vec<u32> {
        stations
            .records()
            .iter()
            .map(|s| self.fill.get(&s.id).copied().unwrap_or(0))
            .collect()
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn looks_like_header(record: &csv::StringRecord) -> bool {
    record.get(0).map(|f| f.parse::<i64>().is_err()).unwrap_or(false)
}

fn field<'a>(record: &'a csv::StringRecord, i: usize, what: &str) -> Result<&'a str, CorpusError> {
    record.get(i).ok_or_else(|| CorpusError::Malformed {
        line: line_of(record),
        message: format!("missing column {what}"),
    })
}

fn parse_num<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, what: &str) -> Result<T, CorpusError> {
    let text = field(record, i, what)?;
    text.parse().map_err(|_| CorpusError::Malformed {
        line: line_of(record),
        message: format!("invalid {what}: {text:?}"),
    })
}

/// Parse a station table: `id, name, lat, lon, size`.
pub fn read_stations<R: Read>(input: R) -> Result<StationTable, CorpusError> {
    let mut out = Vec::new();
    for (i, record) in csv_reader(input).records().enumerate() {
        let record = record?;
        if i == 0 && looks_like_header(&record) {
            continue;
        }
        if record.len() != 5 {
            return Err(CorpusError::Malformed {
                line: line_of(&record),
                message: format!("expected 5 columns, found {}", record.len()),
            });
        }
        let size: i64 = parse_num(&record, 4, "size")?;
        let id: StationId = parse_num(&record, 0, "id")?;
        if size <= 0 {
            return Err(CorpusError::InvalidSize(id));
        }
        out.push(StationRecord {
            id,
            name: field(&record, 1, "name")?.to_string(),
            lat: parse_num(&record, 2, "lat")?,
            lon: parse_num(&record, 3, "lon")?,
            size: size as u32,
        });
    }
    StationTable::new(out)
}

pub fn load_stations(path: &Path) -> Result<StationTable, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_stations(BufReader::new(file))
}

/// Parse rides: `bike-id, start date, start station-id, end date, end
/// station-id`. Station ids must exist in `stations`.
pub fn read_rides<R: Read>(input: R, stations: &StationTable, epoch: &Epoch) -> Result<Vec<RideRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, record) in csv_reader(input).records().enumerate() {
        let record = record?;
        if i == 0 && looks_like_header(&record) {
            continue;
        }
        let line = line_of(&record);
        if record.len() != 5 {
            return Err(CorpusError::Malformed {
                line,
                message: format!("expected 5 columns, found {}", record.len()),
            });
        }
        let time = |i: usize| -> Result<i64, CorpusError> {
            let text = field(&record, i, "timestamp")?;
            epoch.parse(text).ok_or_else(|| CorpusError::BadTimestamp {
                line,
                value: text.to_string(),
            })
        };
        let station = |i: usize| -> Result<StationId, CorpusError> {
            let id: StationId = parse_num(&record, i, "station id")?;
            match stations.index_of(id) {
                Some(_) => Ok(id),
                None => Err(CorpusError::UnknownStation { line, id }),
            }
        };
        let ride = RideRecord {
            bike_id: parse_num(&record, 0, "bike id")?,
            start_time: time(1)?,
            start_station: station(2)?,
            end_time: time(3)?,
            end_station: station(4)?,
        };
        if ride.end_time < ride.start_time {
            return Err(CorpusError::EndBeforeStart { line });
        }
        out.push(ride);
    }
    Ok(out)
}

pub fn load_rides(path: &Path, stations: &StationTable, epoch: &Epoch) -> Result<Vec<RideRecord>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_rides(BufReader::new(file), stations, epoch)
}

pub fn write_stations<W: Write>(out: W, stations: &StationTable) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "name", "lat", "lon", "size"])?;
    for s in stations.records() {
        w.write_record([
            s.id.to_string(),
            s.name.clone(),
            format!("{:.6}", s.lat),
            format!("{:.6}", s.lon),
            s.size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CorpusError::Io {
        path: "<stations>".into(),
        source: e,
    })
}

pub fn write_rides<W: Write>(out: W, rides: &[RideRecord], epoch: &Epoch) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bike_id", "start_date", "start_station_id", "end_date", "end_station_id"])?;
    for r in rides {
        w.write_record([
            r.bike_id.to_string(),
            epoch.format(r.start_time),
            r.start_station.to_string(),
            epoch.format(r.end_time),
            r.end_station.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CorpusError::Io {
        path: "<rides>".into(),
        source: e,
    })
}

pub fn read_snapshot<R: Read>(input: R) -> Result<Snapshot, CorpusError> {
    serde_json::from_reader(input).map_err(|e| CorpusError::Snapshot(e.to_string()))
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_snapshot(BufReader::new(file))
}

pub fn write_snapshot<W: Write>(out: W, snapshot: &Snapshot) -> Result<(), CorpusError> {
    serde_json::to_writer(out, snapshot).map_err(|e| CorpusError::Snapshot(e.to_string()))
}

/// Parse a day calendar: `date, day_type` rows with `weekday`/`weekend`.
pub fn read_calendar<R: Read>(input: R, epoch: &Epoch) -> Result<DayCalendar, CorpusError> {
    let mut days = Vec::new();
    for (i, record) in csv_reader(input).records().enumerate() {
        let record = record?;
        let line = line_of(&record);
        let date_text = field(&record, 0, "date")?;
        let date = match NaiveDate::parse_from_str(date_text, "%Y-%m-%d") {
            Ok(d) => d,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(CorpusError::BadTimestamp {
                    line,
                    value: date_text.to_string(),
                })
            }
        };
        let kind = match field(&record, 1, "day_type")? {
            "weekday" => DayType::Weekday,
            "weekend" => DayType::Weekend,
            other => {
                return Err(CorpusError::Malformed {
                    line,
                    message: format!("unknown day type {other:?}"),
                })
            }
        };
        let minutes = epoch.minutes(date.and_hms_opt(0, 0, 0).unwrap());
        days.push((epoch.day_index(minutes), kind));
    }
    Ok(DayCalendar::explicit(days))
}

pub fn write_calendar<W: Write>(out: W, calendar: &DayCalendar, epoch: &Epoch) -> Result<(), CorpusError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "day_type"])?;
    let midnight = epoch.0.date().and_hms_opt(0, 0, 0).unwrap();
    for &(day, kind) in calendar.days() {
        let date = (midnight + Duration::days(day)).format("%Y-%m-%d").to_string();
        w.write_record([date.as_str(), kind.as_str()])?;
    }
    w.flush().map_err(|e| CorpusError::Io {
        path: "<calendar>".into(),
        source: e,
    })
}

/// Complete corpus in memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub stations: StationTable,
    pub rides: Vec<RideRecord>,
    pub snapshot: Snapshot,
    pub calendar: DayCalendar,
    pub epoch: Epoch,
}

/// File names used by [`Corpus::write_dir`] and [`Corpus::read_dir`].
pub const STATIONS_FILE: &str = "stations.csv";
pub const RIDES_FILE: &str = "rides.csv";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const CALENDAR_FILE: &str = "calendar.csv";

impl Corpus {
    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let create = |name: &str| -> Result<BufWriter<File>, CorpusError> {
            let p = dir.join(name);
            File::create(&p).map(BufWriter::new).map_err(|e| CorpusError::io(&p, e))
        };
        write_stations(create(STATIONS_FILE)?, &self.stations)?;
        write_rides(create(RIDES_FILE)?, &self.rides, &self.epoch)?;
        let mut snap = create(SNAPSHOT_FILE)?;
        write_snapshot(&mut snap, &self.snapshot)?;
        snap.flush().map_err(|e| CorpusError::io(dir, e))?;
        write_calendar(create(CALENDAR_FILE)?, &self.calendar, &self.epoch)?;
        Ok(())
    }

    /// Read a corpus directory. A missing calendar file falls back to every
    /// day between the first and last ride.
    pub fn read_dir(dir: &Path, epoch: Epoch) -> Result<Self, CorpusError> {
        let stations = load_stations(&dir.join(STATIONS_FILE))?;
        let rides = load_rides(&dir.join(RIDES_FILE), &stations, &epoch)?;
        let snapshot = load_snapshot(&dir.join(SNAPSHOT_FILE))?;
        snapshot.validate(&stations)?;
        let cal_path = dir.join(CALENDAR_FILE);
        let calendar = if cal_path.exists() {
            let f = File::open(&cal_path).map_err(|e| CorpusError::io(&cal_path, e))?;
            read_calendar(BufReader::new(f), &epoch)?
        } else {
            DayCalendar::spanning(&rides, &epoch)
        };
        Ok(Corpus {
            stations,
            rides,
            snapshot,
            calendar,
            epoch,
        })
    }
}

/// Gaussian commuter peak in the hourly departure profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Extra departures per station per hour at the peak centre.
    pub height: f64,
    /// Centre, hours after midnight.
    pub center_hour: f64,
    /// Standard deviation in hours.
    pub width_hours: f64,
}

impl Peak {
    fn at(&self, hour: f64) -> f64 {
        let z = (hour - self.center_hour) / self.width_hours;
        self.height * (-0.5 * z * z).exp()
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub station_count: usize,
    pub fleet_size: u32,
    pub weekday_count: usize,
    pub weekend_count: usize,
    /// Departures per station per hour outside the peaks.
    pub base_rate: f64,
    pub morning: Peak,
    pub evening: Peak,
    /// Radius of the served disc in km.
    pub radius_km: f64,
    /// Decay length of the gravity kernel in km.
    pub kernel_km: f64,
    /// Scale of the "city centre" used to bias commuter flows, in km.
    pub center_km: f64,
    pub min_size: u32,
    pub max_size: u32,
    pub cycling_speed_kmh: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            station_count: 50,
            fleet_size: 500,
            weekday_count: 10,
            weekend_count: 10,
            base_rate: 1.4,
            morning: Peak {
                height: 4.0,
                center_hour: 8.5,
                width_hours: 0.9,
            },
            evening: Peak {
                height: 3.5,
                center_hour: 17.75,
                width_hours: 1.1,
            },
            radius_km: 3.0,
            kernel_km: 1.2,
            center_km: 1.2,
            min_size: 15,
            max_size: 27,
            cycling_speed_kmh: 12.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// Departures per station per hour at `hour` for the given day type.
    /// Weekends carry only the flat base profile.
    pub fn hourly_rate(&self, day: DayType, hour: f64) -> f64 {
        if !(6.0..24.0).contains(&hour) {
            return 0.0;
        }
        match day {
            DayType::Weekend => self.base_rate,
            DayType::Weekday => self.base_rate + self.morning.at(hour) + self.evening.at(hour),
        }
    }
}

const CENTER_LAT: f64 = 51.5074;
const CENTER_LON: f64 = -0.1278;
const KM_PER_DEG_LAT: f64 = 111.32;

/// Generate stations, rides, a night-time snapshot and the day calendar.
///
/// Stations are scattered over a disc; each departure picks a component
/// (background, morning, evening) in proportion to its intensity. Morning
/// trips lean from the periphery to the centre, evening trips the reverse,
/// all weighted by a gravity kernel `exp(−d/σ)`. The output is fully
/// determined by the seed.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus, CorpusError> {
    if spec.station_count < 3 {
        return Err(CorpusError::InfeasibleSpec("need at least 3 stations".into()));
    }
    if spec.min_size == 0 || spec.min_size > spec.max_size {
        return Err(CorpusError::InfeasibleSpec("invalid station size range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.station_count;
    let km_per_deg_lon = KM_PER_DEG_LAT * CENTER_LAT.to_radians().cos();

    let mut xy = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let r = spec.radius_km * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let (x, y) = (r * theta.cos(), r * theta.sin());
        xy.push((x, y));
        records.push(StationRecord {
            id: i as StationId + 1,
            name: format!("Station {}", i + 1),
            lat: CENTER_LAT + y / KM_PER_DEG_LAT,
            lon: CENTER_LON + x / km_per_deg_lon,
            size: rng.random_range(spec.min_size..=spec.max_size),
        });
    }
    let stations = StationTable::new(records)?;
    if spec.fleet_size as u64 > stations.total_capacity() {
        return Err(CorpusError::InfeasibleSpec(format!(
            "fleet of {} exceeds {} docks",
            spec.fleet_size,
            stations.total_capacity()
        )));
    }

    let dist = |i: usize, j: usize| ((xy[i].0 - xy[j].0).powi(2) + (xy[i].1 - xy[j].1).powi(2)).sqrt();
    let centrality: Vec<f64> = xy
        .iter()
        .map(|&(x, y)| (-(x * x + y * y) / (2.0 * spec.center_km * spec.center_km)).exp())
        .collect();
    // per-component origin weights and destination kernels
    let kernel = |i: usize, j: usize| (-dist(i, j) / spec.kernel_km).exp();
    let morning_origin: Vec<f64> = centrality.iter().map(|c| 1.0 - 0.85 * c).collect();
    let evening_origin: Vec<f64> = centrality.iter().map(|c| 0.15 + c).collect();
    let mut base_dest = vec![vec![0.0; n]; n];
    let mut morning_dest = vec![vec![0.0; n]; n];
    let mut evening_dest = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let k = if i == j { 0.05 } else { kernel(i, j) };
            base_dest[i][j] = k;
            morning_dest[i][j] = k * (0.1 + centrality[j]);
            evening_dest[i][j] = k * (1.0 - 0.85 * centrality[j]);
        }
    }
    // background trips follow a symmetric pair weight, so they carry no net drift
    let base_origin: Vec<f64> = base_dest.iter().map(|row| row.iter().sum()).collect();

    let epoch = Epoch::default();
    // first Monday on or after 2010-07-05
    let mut date = NaiveDate::from_ymd_opt(2010, 7, 5).unwrap();
    let (mut weekdays_left, mut weekends_left) = (spec.weekday_count, spec.weekend_count);
    let mut calendar_days = Vec::new();
    let mut rides = Vec::new();
    let speed_noise = Normal::new(0.0, 0.15).unwrap();
    let mut bike_id: u64 = 1000;

    while weekdays_left + weekends_left > 0 {
        let midnight = epoch.minutes(date.and_hms_opt(0, 0, 0).unwrap());
        let kind = epoch.day_type(midnight);
        let take = match kind {
            DayType::Weekday if weekdays_left > 0 => {
                weekdays_left -= 1;
                true
            }
            DayType::Weekend if weekends_left > 0 => {
                weekends_left -= 1;
                true
            }
            _ => false,
        };
        if take {
            calendar_days.push((epoch.day_index(midnight), kind));
            for minute in SERVICE_START_MINUTE..MINUTES_PER_DAY as u32 {
                let hour = minute as f64 / 60.0 + 1.0 / 120.0;
                let base = spec.base_rate;
                let (m, e) = match kind {
                    DayType::Weekday => (spec.morning.at(hour), spec.evening.at(hour)),
                    DayType::Weekend => (0.0, 0.0),
                };
                let per_minute = (base + m + e) * n as f64 / 60.0;
                if per_minute <= 0.0 {
                    continue;
                }
                let count = Poisson::new(per_minute).unwrap().sample(&mut rng) as usize;
                for _ in 0..count {
                    let u = rng.random::<f64>() * (base + m + e);
                    let (origin_w, dest_w) = if u < base {
                        (&base_origin, &base_dest)
                    } else if u < base + m {
                        (&morning_origin, &morning_dest)
                    } else {
                        (&evening_origin, &evening_dest)
                    };
                    let i = weighted_pick(&mut rng, origin_w);
                    let j = weighted_pick(&mut rng, &dest_w[i]);
                    let d = if i == j { 0.8 + rng.random::<f64>() } else { dist(i, j) };
                    let speed = spec.cycling_speed_kmh * (1.0f64 + speed_noise.sample(&mut rng)).clamp(0.5, 1.6);
                    let duration = (2.0 + 60.0 * d / speed).round().max(1.0) as i64;
                    let start = midnight + minute as i64;
                    rides.push(RideRecord {
                        bike_id,
                        start_time: start,
                        start_station: i as StationId + 1,
                        end_time: start + duration,
                        end_station: j as StationId + 1,
                    });
                    bike_id += 1;
                }
            }
        }
        date = date.succ_opt().unwrap();
    }

    let snapshot = night_snapshot(&stations, spec.fleet_size, epoch.minutes(NaiveDate::from_ymd_opt(2010, 7, 5).unwrap().and_hms_opt(3, 0, 0).unwrap()));
    Ok(Corpus {
        stations,
        rides,
        snapshot,
        calendar: DayCalendar::explicit(calendar_days),
        epoch,
    })
}

fn weighted_pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Spread `fleet` bikes proportionally to station size (largest remainder).
pub fn night_snapshot(stations: &StationTable, fleet: u32, time: i64) -> Snapshot {
    let total = stations.total_capacity() as f64;
    let shares: Vec<f64> = stations
        .records()
        .iter()
        .map(|s| fleet as f64 * s.size as f64 / total)
        .collect();
    let mut fill: Vec<u32> = shares.iter().map(|s| s.floor() as u32).collect();
    let mut left = fleet - fill.iter().sum::<u32>();
    let mut order: Vec<usize> = (0..fill.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fill[i] < stations.get(i).size {
            fill[i] += 1;
            left -= 1;
        }
    }
    Snapshot {
        time,
        fill: stations
            .records()
            .iter()
            .zip(fill)
            .map(|(s, f)| (s.id, f))
            .collect(),
    }
}

/// Ids referenced by rides that are missing from the table.
pub fn dangling_station_ids(rides: &[RideRecord], stations: &StationTable) -> HashSet<StationId> {
    rides
        .iter()
        .flat_map(|r| [r.start_station, r.end_station])
        .filter(|id| stations.index_of(*id).is_none())
        .collect()
}
