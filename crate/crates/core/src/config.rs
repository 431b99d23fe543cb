//! Run settings and the `key = value` config file format.
//!
//! Grammar, one setting per line:
//!
//! ```text
//! # comment
//! key = value          # trailing comments are allowed
//! snr-db = 10, 20, 30  # lists are comma separated
//! ```
//!
//! Keys are the long CLI flag names without the leading dashes (`_` is
//! accepted in place of `-`). Every run writes its fully resolved settings in
//! this format as `run_manifest.txt`, which can be fed back with `--config`.

use std::path::{Path, PathBuf};

use crate::channel::ChannelModelSpec;
use crate::error::{Error, Result};
use crate::estimator::{TrainOptions, DEFAULT_EPS_STOP, DEFAULT_LEARNING_RATE, DEFAULT_MAX_EPOCHS};
use crate::model::RisConfig;

/// Bumped whenever a key is added, removed or changes meaning.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub snr_db: Vec<f64>,
    /// RIS sizes; commands that need a default supply their own.
    pub mris: Option<Vec<usize>>,
    pub mr: Option<usize>,
    pub bits: u32,
    pub groups: usize,
    pub pilot_len: usize,
    pub lr: f64,
    pub eps_stop: f64,
    pub max_epochs: usize,
    pub eps_max_deg: f64,
    pub trials: usize,
    pub out: PathBuf,
    /// `false` selects i.i.d. Rayleigh channels.
    pub saleh_valenzuela: bool,
    pub sv_clusters: usize,
    pub sv_rays: usize,
    /// Directory with `measurements.csv` and `schedule.csv` to calibrate
    /// instead of simulating.
    pub input: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 1,
            snr_db: vec![20.0],
            mris: None,
            mr: None,
            bits: 4,
            groups: 15,
            pilot_len: 100,
            lr: DEFAULT_LEARNING_RATE,
            eps_stop: DEFAULT_EPS_STOP,
            max_epochs: DEFAULT_MAX_EPOCHS,
            eps_max_deg: 20.0,
            trials: 30,
            out: PathBuf::from("out"),
            saleh_valenzuela: true,
            sv_clusters: 3,
            sv_rays: 8,
            input: None,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidConfig(format!("{key} = {value}: expected {what}"))
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, what))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(|v| parse_one(key, v, what))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(bad(key, value, what));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Applies one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let k = key.as_str();
        match k {
            "seed" => self.seed = parse_one(k, value, "an unsigned integer")?,
            "snr-db" => self.snr_db = parse_list(k, value, "a list of SNRs in dB")?,
            "mris" => self.mris = Some(parse_list(k, value, "a list of element counts")?),
            "mr" => self.mr = Some(parse_one(k, value, "an antenna count")?),
            "bits" => self.bits = parse_one(k, value, "a bit count")?,
            "groups" => self.groups = parse_one(k, value, "a group count")?,
            "pilot-len" => self.pilot_len = parse_one(k, value, "a pilot length")?,
            "lr" => self.lr = parse_one(k, value, "a learning rate")?,
            "eps-stop" => self.eps_stop = parse_one(k, value, "a stopping threshold")?,
            "max-epochs" => self.max_epochs = parse_one(k, value, "an epoch count")?,
            "eps-max-deg" => self.eps_max_deg = parse_one(k, value, "an angle in degrees")?,
            "trials" => self.trials = parse_one(k, value, "a trial count")?,
            "out" => self.out = PathBuf::from(value),
            "input" => self.input = Some(PathBuf::from(value)),
            "channel" => {
                self.saleh_valenzuela = match value {
                    "rayleigh" => false,
                    "sv" | "saleh-valenzuela" => true,
                    _ => return Err(bad(k, value, "rayleigh or sv")),
                }
            }
            "sv-clusters" => self.sv_clusters = parse_one(k, value, "a cluster count")?,
            "sv-rays" => self.sv_rays = parse_one(k, value, "a ray count")?,
            // Written into manifests; not a setting.
            "command" | "config-schema" => {}
            _ => return Err(Error::InvalidConfig(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    pub fn channel_spec(&self) -> Result<ChannelModelSpec> {
        if self.saleh_valenzuela {
            ChannelModelSpec::saleh_valenzuela(self.sv_clusters, self.sv_rays)
        } else {
            Ok(ChannelModelSpec::rayleigh())
        }
    }

    /// Applies every setting of a config file, in file order.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected 'key = value', found '{raw}'", n + 1))
            })?;
            self.apply(k, v)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn snr_single(&self) -> Result<f64> {
        match self.snr_db.as_slice() {
            [s] => Ok(*s),
            _ => Err(Error::InvalidConfig(format!(
                "this command takes a single SNR, got {}",
                join(&self.snr_db)
            ))),
        }
    }

    pub fn mris_single(&self, default: usize) -> Result<usize> {
        match self.mris.as_deref() {
            None => Ok(default),
            Some([m]) => Ok(*m),
            Some(list) => Err(Error::InvalidConfig(format!(
                "this command takes a single RIS size, got {}",
                join(list)
            ))),
        }
    }

    pub fn mris_list(&self, default: &[usize]) -> Vec<usize> {
        self.mris.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn ris_config(&self, m_ris: usize, m_r: usize, snr_db: f64) -> Result<RisConfig> {
        RisConfig::new(m_ris, self.bits, m_r, self.pilot_len, self.groups, snr_db)
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let t = TrainOptions {
            learning_rate: self.lr,
            eps_stop: self.eps_stop,
            max_epochs: self.max_epochs,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn eps_max_rad(&self) -> Result<f64> {
        if !(0.0..180.0).contains(&self.eps_max_deg) {
            return Err(Error::InvalidConfig(format!(
                "eps-max-deg must be in [0, 180), got {}",
                self.eps_max_deg
            )));
        }
        Ok(self.eps_max_deg.to_radians())
    }

    /// All settings as `key = value` pairs, sufficient to reproduce a run.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut v: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("snr-db", join(&self.snr_db)),
        ];
        if let Some(m) = &self.mris {
            v.push(("mris", join(m)));
        }
        if let Some(m) = self.mr {
            v.push(("mr", m.to_string()));
        }
        v.extend([
            ("bits", self.bits.to_string()),
            ("groups", self.groups.to_string()),
            ("pilot-len", self.pilot_len.to_string()),
            ("lr", self.lr.to_string()),
            ("eps-stop", self.eps_stop.to_string()),
            ("max-epochs", self.max_epochs.to_string()),
            ("eps-max-deg", self.eps_max_deg.to_string()),
            ("trials", self.trials.to_string()),
        ]);
        v.extend([
            ("channel", if self.saleh_valenzuela { "sv" } else { "rayleigh" }.to_string()),
            ("sv-clusters", self.sv_clusters.to_string()),
            ("sv-rays", self.sv_rays.to_string()),
        ]);
        if let Some(p) = &self.input {
            v.push(("input", p.display().to_string()));
        }
        v.into_iter().map(|(k, s)| (k.to_string(), s)).collect()
    }
}
