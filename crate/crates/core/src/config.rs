//! Run configuration: every tunable constant of the pipeline in one
//! `key = value` file. Later assignments win, so command-line overrides are
//! applied by appending them after the file contents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::camera::DEFAULT_TAU_DEN;
use crate::error::{Error, Result};
use crate::kv::{self, Entry};
use crate::losses::LossWeights;
use crate::refinement::RefinementConfig;
use crate::segmentation::{Connectivity, SegmentationParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub losses: LossWeights,
    pub segmentation: SegmentationParams,
    pub tau_den: f64,
    pub refinement: RefinementConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            losses: LossWeights::default(),
            segmentation: SegmentationParams::default(),
            tau_den: DEFAULT_TAU_DEN,
            refinement: RefinementConfig::default(),
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: [&str; 20] = [
    "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "kappa", "eta", "gamma", "m_steps",
    "b_tolerance", "k", "min_region_size", "connectivity", "tau_den", "proj_channels",
    "context_channels", "hidden_channels", "t_max", "min_depth", "seed",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&kv::parse(text)?)
    }

    /// Defaults, then `file` (if any), then `overrides` of the form `key=value`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries = match file {
            Some(p) => kv::parse(&std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read {}: {e}", p.display()))
            })?)?,
            None => Vec::new(),
        };
        for o in overrides {
            let mut parsed = kv::parse(o)?;
            if parsed.len() != 1 {
                return Err(Error::Config(format!("override {o:?} is not a single key=value")));
            }
            entries.append(&mut parsed);
        }
        Self::from_entries(&entries)
    }

    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut last: BTreeMap<&str, &Entry> = BTreeMap::new();
        for e in entries {
            if !CONFIG_KEYS.contains(&e.key.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key `{}`", e.line, e.key)));
            }
            last.insert(e.key.as_str(), e);
        }
        let mut c = RunConfig::default();
        for (key, e) in &last {
            match *key {
                "lambda1" | "lambda2" | "lambda3" | "lambda4" | "lambda5" => {
                    let i = key[6..].parse::<usize>().expect("lambda index") - 1;
                    c.losses.lambda[i] = e.parse()?;
                }
                "kappa" => c.losses.kappa = e.parse()?,
                "eta" => c.losses.eta = e.parse()?,
                "gamma" => c.losses.gamma = e.parse()?,
                "b_tolerance" => c.losses.b_tolerance = e.parse()?,
                "k" => c.segmentation.k = e.parse()?,
                "min_region_size" => c.segmentation.min_region_size = e.parse()?,
                "connectivity" => {
                    c.segmentation.connectivity = match e.value.as_str() {
                        "4" => Connectivity::Four,
                        "8" => Connectivity::Eight,
                        v => {
                            return Err(Error::Config(format!(
                                "line {}: connectivity must be 4 or 8, got {v:?}",
                                e.line
                            )))
                        }
                    }
                }
                "tau_den" => c.tau_den = e.parse()?,
                "proj_channels" => c.refinement.proj_channels = e.parse()?,
                "context_channels" => c.refinement.context_channels = e.parse()?,
                "hidden_channels" => c.refinement.hidden_channels = e.parse()?,
                "min_depth" => c.refinement.min_depth = e.parse()?,
                "seed" => c.seed = e.parse()?,
                // iteration counts are resolved together below
                "m_steps" | "t_max" => {}
                _ => unreachable!("key list checked above"),
            }
        }
        // the loss sums over exactly the iterates the refinement produces
        let steps = match (last.get("m_steps"), last.get("t_max")) {
            (Some(m), Some(t)) => {
                let (m, t): (usize, usize) = (m.parse()?, t.parse()?);
                if m != t {
                    return Err(Error::Config(format!(
                        "m_steps = {m} and t_max = {t} disagree; set one of them"
                    )));
                }
                Some(m)
            }
            (Some(e), None) | (None, Some(e)) => Some(e.parse()?),
            (None, None) => None,
        };
        if let Some(s) = steps {
            c.losses.m_steps = s;
            c.refinement.t_max = s;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        self.refinement.validate()?;
        if !(self.segmentation.k > 0.0 && self.segmentation.k.is_finite()) {
            return Err(Error::Config(format!("k must be positive, got {}", self.segmentation.k)));
        }
        if !(self.tau_den > 0.0) {
            return Err(Error::Config(format!("tau_den must be positive, got {}", self.tau_den)));
        }
        if self.losses.m_steps != self.refinement.t_max {
            return Err(Error::Config("m_steps and t_max disagree".into()));
        }
        Ok(())
    }

    /// The effective configuration in the same format [`parse`](Self::parse) reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, l) in self.losses.lambda.iter().enumerate() {
            let _ = writeln!(s, "lambda{} = {l}", i + 1);
        }
        let l = &self.losses;
        let _ = writeln!(s, "kappa = {}\neta = {}\ngamma = {}", l.kappa, l.eta, l.gamma);
        let _ = writeln!(s, "m_steps = {}\nb_tolerance = {}", l.m_steps, l.b_tolerance);
        let g = &self.segmentation;
        let conn = match g.connectivity {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        };
        let _ = writeln!(s, "k = {}\nmin_region_size = {}\nconnectivity = {conn}", g.k, g.min_region_size);
        let _ = writeln!(s, "tau_den = {}", self.tau_den);
        let r = &self.refinement;
        let _ = writeln!(
            s,
            "proj_channels = {}\ncontext_channels = {}\nhidden_channels = {}",
            r.proj_channels, r.context_channels, r.hidden_channels
        );
        let _ = writeln!(s, "t_max = {}\nmin_depth = {}\nseed = {}", r.t_max, r.min_depth, self.seed);
        s
    }
}
