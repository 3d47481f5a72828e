//! TOML configuration file, merged under command-line flags.

use std::path::{Path, PathBuf};

use dockflow::demand::DayType;
use dockflow::pricing::MpcConfig;
use dockflow::routing::RoutingConfig;
use dockflow::sim::{FitParams, SimConfig};
use serde::{Deserialize, Serialize};

/// Every section is optional; missing keys take their defaults.
///
/// `alpha = inf` (a valid TOML float) disables prices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub fit: FitParams,
    pub sim: SimSection,
    pub routing: RoutingConfig,
    pub mpc: MpcConfig,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub trucks: usize,
    pub alpha: f64,
    pub seed: u64,
    pub day_type: DayType,
    pub burn_in_minutes: i64,
    pub count_diverted_full: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        let base = SimConfig::default();
        SimSection {
            trucks: base.trucks,
            alpha: f64::INFINITY,
            seed: base.seed,
            day_type: DayType::Weekday,
            burn_in_minutes: base.burn_in_minutes,
            count_diverted_full: base.count_diverted_full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub trucks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            trucks: vec![0, 1, 2, 3],
            alphas: vec![f64::INFINITY],
            seeds: (1..=20).collect(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}

/// `inf` and non-finite values mean "prices off".
pub fn alpha_from(value: f64) -> Option<f64> {
    value.is_finite().then_some(value)
}

pub fn parse_alpha(text: &str) -> Result<f64, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "off" | "none" => Ok(f64::INFINITY),
        t => {
            let a: f64 = t.parse().map_err(|_| format!("invalid alpha {text:?}"))?;
            if a > 0.0 {
                Ok(a)
            } else {
                Err(format!("alpha must be positive, got {text:?}"))
            }
        }
    }
}

/// Seeds as a comma list with optional inclusive ranges, e.g. `1-5,9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| format!("invalid seed range {part:?}"))?;
                let b: u64 = b.trim().parse().map_err(|_| format!("invalid seed range {part:?}"))?;
                if a > b {
                    return Err(format!("empty seed range {part:?}"));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().map_err(|_| format!("invalid seed {part:?}"))?),
        }
    }
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-3,7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn alpha_values() {
        assert_eq!(alpha_from(parse_alpha("inf").unwrap()), None);
        assert_eq!(alpha_from(parse_alpha("0.1").unwrap()), Some(0.1));
        assert!(parse_alpha("-1").is_err());
    }

    #[test]
    fn toml_sections() {
        let cfg: FileConfig = toml::from_str(
            "[sim]\ntrucks = 2\nalpha = inf\nday_type = \"weekend\"\n[fit]\nc_max = 15.0\n[sweep]\nalphas = [inf, 0.1]\n",
        )
        .unwrap();
        assert_eq!(cfg.sim.trucks, 2);
        assert_eq!(alpha_from(cfg.sim.alpha), None);
        assert_eq!(cfg.sim.day_type, DayType::Weekend);
        assert_eq!(cfg.fit.c_max, 15.0);
        assert_eq!(cfg.sweep.alphas.len(), 2);
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
