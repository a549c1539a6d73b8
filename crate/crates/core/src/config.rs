//! Run configuration shared by every subcommand.
//!
//! Every parameter has a key, a default, and a textual form. Values are
//! layered: built-in defaults, then a flat `key = value` file, then
//! command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, SsteError};
use crate::evaluation::ExperimentConfig;
use crate::ingestion::read_file;
use crate::synthgen::{Drift, GeneratorConfig};

/// Which part of the pipeline a key configures; used to pick the flags each
/// subcommand accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyGroup {
    Input,
    Output,
    Sites,
    Detection,
    Arma,
    Kalman,
    Location,
    Predict,
    Evaluation,
    Generator,
    Seed,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub group: KeyGroup,
    pub help: &'static str,
}

const fn key(name: &'static str, group: KeyGroup, help: &'static str) -> KeySpec {
    KeySpec { name, group, help }
}

/// All recognised keys.
pub const KEYS: &[KeySpec] = &[
    key(
        "checkins",
        KeyGroup::Input,
        "check-in CSV (user_id,timestamp,lat,lon)",
    ),
    key(
        "friends",
        KeyGroup::Input,
        "friendship CSV (user_id_a,user_id_b)",
    ),
    key(
        "events",
        KeyGroup::Input,
        "previously detected events (JSONL); skips detection",
    ),
    key(
        "out",
        KeyGroup::Output,
        "output path; its default depends on the command",
    ),
    key(
        "sites",
        KeyGroup::Sites,
        "region sites CSV (site_id,lat,lon); k-means sites when absent",
    ),
    key(
        "n_sites",
        KeyGroup::Sites,
        "number of k-means sites when no sites file is given",
    ),
    key(
        "epsilon_time",
        KeyGroup::Detection,
        "maximum time gap within an event, seconds",
    ),
    key(
        "epsilon_dist",
        KeyGroup::Detection,
        "maximum distance within an event, meters",
    ),
    key(
        "min_participants",
        KeyGroup::Detection,
        "smallest event group",
    ),
    key("p_max", KeyGroup::Arma, "largest AR order searched"),
    key("q_max", KeyGroup::Arma, "largest MA order searched"),
    key("process_noise", KeyGroup::Kalman, "delta in Q = delta*I"),
    key(
        "interval_floor",
        KeyGroup::Kalman,
        "smallest predicted interval, seconds",
    ),
    key(
        "alpha",
        KeyGroup::Location,
        "additive smoothing of the temporal score",
    ),
    key(
        "half_life",
        KeyGroup::Location,
        "decay half-life of friends' check-ins, seconds",
    ),
    key(
        "xi",
        KeyGroup::Predict,
        "weight of the temporal score in the blend",
    ),
    key(
        "top_n",
        KeyGroup::Predict,
        "number of ranked regions per prediction",
    ),
    key(
        "proportions",
        KeyGroup::Evaluation,
        "training proportions, comma separated",
    ),
    key(
        "xi_values",
        KeyGroup::Evaluation,
        "blend weights evaluated, comma separated",
    ),
    key(
        "top_n_values",
        KeyGroup::Evaluation,
        "list lengths N for Accuracy@TopN, comma separated",
    ),
    key(
        "trace_proportion",
        KeyGroup::Evaluation,
        "training proportion at which error traces are written",
    ),
    key("n_users", KeyGroup::Generator, "number of users"),
    key("group_size", KeyGroup::Generator, "users per friend group"),
    key(
        "edge_prob",
        KeyGroup::Generator,
        "probability of a friendship between groups",
    ),
    key("n_regions", KeyGroup::Generator, "number of sites"),
    key(
        "center_lat",
        KeyGroup::Generator,
        "latitude of the layout centre",
    ),
    key(
        "center_lon",
        KeyGroup::Generator,
        "longitude of the layout centre",
    ),
    key(
        "extent_m",
        KeyGroup::Generator,
        "half-width of the site layout, meters",
    ),
    key("weeks", KeyGroup::Generator, "simulated weeks"),
    key(
        "slots_per_group",
        KeyGroup::Generator,
        "weekly meeting slots per group",
    ),
    key(
        "alt_regions",
        KeyGroup::Generator,
        "alternate meeting regions per slot",
    ),
    key(
        "schedule_concentration",
        KeyGroup::Generator,
        "probability of meeting at the slot's home region",
    ),
    key(
        "beta",
        KeyGroup::Generator,
        "probability a meetup copies a friend's recent location",
    ),
    key(
        "attend_prob",
        KeyGroup::Generator,
        "probability each member attends a meetup",
    ),
    key(
        "offset_phi",
        KeyGroup::Generator,
        "AR coefficient of meeting-time offsets",
    ),
    key(
        "offset_sd",
        KeyGroup::Generator,
        "innovation sd of meeting-time offsets, seconds",
    ),
    key(
        "offset_clip",
        KeyGroup::Generator,
        "bound on meeting-time offsets, seconds",
    ),
    key(
        "drift_week",
        KeyGroup::Generator,
        "week from which offset_phi changes to drift_phi; 0 disables",
    ),
    key(
        "drift_phi",
        KeyGroup::Generator,
        "offset AR coefficient after drift_week",
    ),
    key(
        "member_time_jitter",
        KeyGroup::Generator,
        "per-member check-in time jitter, seconds",
    ),
    key(
        "member_dist_jitter",
        KeyGroup::Generator,
        "per-member check-in position jitter, meters",
    ),
    key(
        "noise_per_week",
        KeyGroup::Generator,
        "background check-ins per user and week",
    ),
    key(
        "start",
        KeyGroup::Generator,
        "first simulated instant, epoch seconds",
    ),
    key("seed", KeyGroup::Seed, "seed for every random choice"),
];

pub fn key_spec(name: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.name == name)
}

/// Accepts both `snake_case` and `kebab-case` spellings.
pub fn normalize_key(name: &str) -> String {
    name.trim().replace('-', "_")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub checkins: Option<PathBuf>,
    pub friends: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub sites: Option<PathBuf>,
    /// Output file or directory; `None` selects the command's default.
    pub out: Option<PathBuf>,
    pub n_sites: usize,
    pub experiment: ExperimentConfig,
    pub xi: f64,
    pub top_n: usize,
    pub generator: GeneratorConfig,
    pub drift_week: usize,
    pub drift_phi: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        RunConfig {
            checkins: None,
            friends: None,
            events: None,
            sites: None,
            out: None,
            n_sites: 50,
            experiment: ExperimentConfig::default(),
            xi: 0.8,
            top_n: 10,
            drift_week: 0,
            drift_phi: generator.offset_phi,
            seed: generator.seed,
            generator,
        }
    }
}

fn parse<T: FromStr>(name: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| SsteError::invalid(name, format!("cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(name: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(name, v)).collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn path_value(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    /// Sets one parameter from its textual form. Unknown keys are rejected.
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let name = normalize_key(name);
        let n = name.as_str();
        let e = &mut self.experiment;
        let g = &mut self.generator;
        match n {
            "checkins" => self.checkins = path_value(value),
            "friends" => self.friends = path_value(value),
            "events" => self.events = path_value(value),
            "sites" => self.sites = path_value(value),
            "out" => self.out = path_value(value),
            "n_sites" => self.n_sites = parse(n, value)?,
            "epsilon_time" => e.detection.epsilon_time = parse(n, value)?,
            "epsilon_dist" => e.detection.epsilon_dist = parse(n, value)?,
            "min_participants" => e.detection.min_participants = parse(n, value)?,
            "p_max" => e.p_max = parse(n, value)?,
            "q_max" => e.q_max = parse(n, value)?,
            "process_noise" => e.kalman.process_noise = parse(n, value)?,
            "interval_floor" => e.kalman.interval_floor = parse(n, value)?,
            "alpha" => e.alpha = parse(n, value)?,
            "half_life" => e.half_life = parse(n, value)?,
            "xi" => self.xi = parse(n, value)?,
            "top_n" => self.top_n = parse(n, value)?,
            "proportions" => e.train_proportions = parse_list(n, value)?,
            "xi_values" => e.xi_values = parse_list(n, value)?,
            "top_n_values" => e.top_n_values = parse_list(n, value)?,
            "trace_proportion" => e.trace_proportion = parse(n, value)?,
            "n_users" => g.n_users = parse(n, value)?,
            "group_size" => g.group_size = parse(n, value)?,
            "edge_prob" => g.edge_prob = parse(n, value)?,
            "n_regions" => g.n_regions = parse(n, value)?,
            "center_lat" => g.center.lat = parse(n, value)?,
            "center_lon" => g.center.lon = parse(n, value)?,
            "extent_m" => g.extent_m = parse(n, value)?,
            "weeks" => g.weeks = parse(n, value)?,
            "slots_per_group" => g.slots_per_group = parse(n, value)?,
            "alt_regions" => g.alt_regions = parse(n, value)?,
            "schedule_concentration" => g.schedule_concentration = parse(n, value)?,
            "beta" => g.beta = parse(n, value)?,
            "attend_prob" => g.attend_prob = parse(n, value)?,
            "offset_phi" => g.offset_phi = parse(n, value)?,
            "offset_sd" => g.offset_sd = parse(n, value)?,
            "offset_clip" => g.offset_clip = parse(n, value)?,
            "drift_week" => self.drift_week = parse(n, value)?,
            "drift_phi" => self.drift_phi = parse(n, value)?,
            "member_time_jitter" => g.member_time_jitter = parse(n, value)?,
            "member_dist_jitter" => g.member_dist_jitter = parse(n, value)?,
            "noise_per_week" => g.noise_per_week = parse(n, value)?,
            "start" => g.start = parse(n, value)?,
            "seed" => self.seed = parse(n, value)?,
            _ => return Err(SsteError::invalid(n, "unknown configuration key")),
        }
        Ok(())
    }

    /// Textual form of a parameter, as accepted by [`RunConfig::set`].
    pub fn get(&self, name: &str) -> Option<String> {
        let e = &self.experiment;
        let g = &self.generator;
        Some(match normalize_key(name).as_str() {
            "checkins" => show_path(&self.checkins),
            "friends" => show_path(&self.friends),
            "events" => show_path(&self.events),
            "sites" => show_path(&self.sites),
            "out" => show_path(&self.out),
            "n_sites" => self.n_sites.to_string(),
            "epsilon_time" => e.detection.epsilon_time.to_string(),
            "epsilon_dist" => e.detection.epsilon_dist.to_string(),
            "min_participants" => e.detection.min_participants.to_string(),
            "p_max" => e.p_max.to_string(),
            "q_max" => e.q_max.to_string(),
            "process_noise" => e.kalman.process_noise.to_string(),
            "interval_floor" => e.kalman.interval_floor.to_string(),
            "alpha" => e.alpha.to_string(),
            "half_life" => e.half_life.to_string(),
            "xi" => self.xi.to_string(),
            "top_n" => self.top_n.to_string(),
            "proportions" => join(&e.train_proportions),
            "xi_values" => join(&e.xi_values),
            "top_n_values" => join(&e.top_n_values),
            "trace_proportion" => e.trace_proportion.to_string(),
            "n_users" => g.n_users.to_string(),
            "group_size" => g.group_size.to_string(),
            "edge_prob" => g.edge_prob.to_string(),
            "n_regions" => g.n_regions.to_string(),
            "center_lat" => g.center.lat.to_string(),
            "center_lon" => g.center.lon.to_string(),
            "extent_m" => g.extent_m.to_string(),
            "weeks" => g.weeks.to_string(),
            "slots_per_group" => g.slots_per_group.to_string(),
            "alt_regions" => g.alt_regions.to_string(),
            "schedule_concentration" => g.schedule_concentration.to_string(),
            "beta" => g.beta.to_string(),
            "attend_prob" => g.attend_prob.to_string(),
            "offset_phi" => g.offset_phi.to_string(),
            "offset_sd" => g.offset_sd.to_string(),
            "offset_clip" => g.offset_clip.to_string(),
            "drift_week" => self.drift_week.to_string(),
            "drift_phi" => self.drift_phi.to_string(),
            "member_time_jitter" => g.member_time_jitter.to_string(),
            "member_dist_jitter" => g.member_dist_jitter.to_string(),
            "noise_per_week" => g.noise_per_week.to_string(),
            "start" => g.start.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = read_file(path)?;
        self.apply_str(&text, path)
    }

    pub fn apply_str(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SsteError::invalid(
                    "config",
                    format!("{}:{}: expected `key = value`", path.display(), i + 1),
                )
            })?;
            self.set(k, v).map_err(|e| match e {
                SsteError::InvalidParameter { name, message } => SsteError::InvalidParameter {
                    name,
                    message: format!("{message} ({}:{})", path.display(), i + 1),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Generator settings with the run seed and the optional drift applied.
    pub fn generator_config(&self) -> GeneratorConfig {
        let mut g = self.generator.clone();
        g.seed = self.seed;
        g.drift = if self.drift_week > 0 {
            vec![Drift {
                step: self.drift_week,
                phi: vec![self.drift_phi],
            }]
        } else {
            Vec::new()
        };
        g
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.generator_config().validate()?;
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(SsteError::invalid("xi", "must be in [0, 1]"));
        }
        if self.top_n == 0 {
            return Err(SsteError::invalid("top_n", "must be >= 1"));
        }
        if self.n_sites == 0 {
            return Err(SsteError::invalid("n_sites", "must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let base = RunConfig::default();
        for k in KEYS {
            let text = base
                .get(k.name)
                .unwrap_or_else(|| panic!("no getter for {}", k.name));
            let mut c = RunConfig::default();
            c.set(k.name, &text)
                .unwrap_or_else(|e| panic!("{}: {e}", k.name));
            assert_eq!(c, base, "{}", k.name);
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        let err = c.set("no_such_key", "1").unwrap_err();
        assert!(err.is_usage());
        assert!(c.get("no_such_key").is_none());
    }

    #[test]
    fn file_layering() {
        let mut c = RunConfig::default();
        c.apply_str(
            "# comment\nxi = 0.5\n\nepsilon-time=1800 # trailing\nproportions = 0.3,0.6\n",
            Path::new("x.conf"),
        )
        .unwrap();
        assert_eq!(c.xi, 0.5);
        assert_eq!(c.experiment.detection.epsilon_time, 1800);
        assert_eq!(c.experiment.train_proportions, vec![0.3, 0.6]);
    }

    #[test]
    fn bad_lines_report_location() {
        let mut c = RunConfig::default();
        let err = c
            .apply_str("xi = 0.5\nbogus = 1\n", Path::new("x.conf"))
            .unwrap_err();
        assert!(err.to_string().contains("x.conf:2"), "{err}");
        let err = c
            .apply_str("no equals sign\n", Path::new("x.conf"))
            .unwrap_err();
        assert!(err.is_usage());
        assert!(c.set("xi", "abc").unwrap_err().is_usage());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let mut c = RunConfig::default();
        c.set("xi", "1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("n_users", "0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn drift_is_applied() {
        let mut c = RunConfig::default();
        c.set("drift_week", "10").unwrap();
        c.set("drift_phi", "-0.3").unwrap();
        c.set("seed", "9").unwrap();
        let g = c.generator_config();
        assert_eq!(g.seed, 9);
        assert_eq!(
            g.drift,
            vec![Drift {
                step: 10,
                phi: vec![-0.3]
            }]
        );
    }
}
