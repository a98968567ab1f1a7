//! Scenario machinery: duration sampling, counter-based random streams and
//! exact enumeration of finite scenario supports.
//!
//! Every random element (a stochastic activity duration or a stochastic
//! constraint delay) draws from its own stream keyed by
//! `(master_seed, scenario_index, element_key)`, so scenario `i` is the same
//! on every machine and independent of how scenarios are split across
//! workers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaSampler, Distribution};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
use thiserror::Error;

use crate::model::{DurationModel, MissionModel};
use crate::network::{Element, Network};
use crate::Minute;

/// Default bound on the number of scenarios an exact enumeration may visit.
pub const DEFAULT_SUPPORT_CAP: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("scenario has no value for `{0}`")]
    Incomplete(String),
    #[error("scenario names unknown element `{0}`")]
    UnknownElement(String),
    #[error("value {value} of `{element}` lies outside its support")]
    OutOfSupport { element: String, value: Minute },
    #[error("support of {size:.3e} scenarios exceeds the cap of {cap}")]
    CapExceeded { size: f64, cap: u64 },
    #[error("`{0}` has a continuous distribution and cannot be enumerated")]
    Continuous(String),
    #[error("malformed scenario line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One realization of every random element of a mission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub realized: BTreeMap<String, Minute>,
    pub realized_delays: BTreeMap<String, Minute>,
    pub seed_tag: String,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix several words into one 64-bit key.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// The random stream of one element in one scenario.
pub fn stream_rng(master_seed: u64, scenario_index: u64, element_key: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let mut s = mix_seed(&[master_seed, element_key]);
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(scenario_index);
    rng
}

/// PERT shape parameters `(α, β)` of the Beta reparameterization.
pub fn pert_shape(min: Minute, mode: Minute, max: Minute, lambda: f64) -> (f64, f64) {
    let range = (max - min) as f64;
    let alpha = 1.0 + lambda * (mode - min) as f64 / range;
    let beta = 1.0 + lambda * (max - mode) as f64 / range;
    (alpha, beta)
}

/// Draw one value in whole minutes.
pub fn sample_duration<R: Rng + ?Sized>(d: &DurationModel, rng: &mut R) -> Minute {
    match d {
        DurationModel::Deterministic { value } => *value,
        DurationModel::ModifiedPert {
            min,
            mode,
            max,
            lambda,
            truncate_below,
        } => {
            if max <= min {
                return *min;
            }
            let (alpha, beta) = pert_shape(*min, *mode, *max, *lambda);
            let range = (max - min) as f64;
            let lower = truncate_below.filter(|lb| lb > min);
            let x = match lower {
                Some(lb) => {
                    // inverse-CDF draw on [lb, max]
                    let dist = BetaDist::new(alpha, beta).expect("validated PERT shape");
                    let u0 = dist.cdf((lb - min) as f64 / range);
                    let u: f64 = rng.random();
                    dist.inverse_cdf(u0 + (1.0 - u0) * u)
                }
                None => BetaSampler::new(alpha, beta).expect("validated PERT shape").sample(rng),
            };
            let v = (*min as f64 + x * range).round() as Minute;
            v.clamp(lower.unwrap_or(*min), *max)
        }
        DurationModel::Discrete { outcomes } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for &(v, p) in outcomes {
                acc += p;
                if u < acc {
                    return v;
                }
            }
            outcomes.last().map(|o| o.0).unwrap_or(0)
        }
    }
}

/// Dense realization: one duration per activity and one delay per
/// constraint, deterministic elements included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Realization {
    pub durations: Vec<Minute>,
    pub delays: Vec<Minute>,
}

impl Realization {
    pub fn get(&self, e: Element) -> Minute {
        match e {
            Element::Activity(i) => self.durations[i],
            Element::Delay(j) => self.delays[j],
        }
    }

    fn set(&mut self, e: Element, v: Minute) {
        match e {
            Element::Activity(i) => self.durations[i] = v,
            Element::Delay(j) => self.delays[j] = v,
        }
    }

    pub fn nominal(net: &Network) -> Self {
        Self {
            durations: net.acts.iter().map(|a| a.duration.nominal()).collect(),
            delays: net.cons.iter().map(|c| c.delay.nominal()).collect(),
        }
    }

    pub fn sample(net: &Network, master_seed: u64, index: u64) -> Self {
        let mut r = Self::nominal(net);
        for &e in &net.elements {
            let mut rng = stream_rng(master_seed, index, net.element_key(e));
            r.set(e, sample_duration(net.element_model(e), &mut rng));
        }
        r
    }

    pub fn from_scenario(net: &Network, scenario: &Scenario) -> Result<Self, ScenarioError> {
        let mut r = Self::nominal(net);
        for id in scenario.realized.keys() {
            if !net.index.contains_key(id) {
                return Err(ScenarioError::UnknownElement(id.clone()));
            }
        }
        for id in scenario.realized_delays.keys() {
            if !net.constraint_index.contains_key(id) {
                return Err(ScenarioError::UnknownElement(id.clone()));
            }
        }
        for &e in &net.elements {
            let id = net.element_id(e);
            let value = match e {
                Element::Activity(_) => scenario.realized.get(id),
                Element::Delay(_) => scenario.realized_delays.get(id),
            }
            .copied()
            .ok_or_else(|| ScenarioError::Incomplete(id.to_string()))?;
            let model = net.element_model(e);
            let in_support = match model.support() {
                Some(s) => s.iter().any(|o| o.0 == value),
                None => value >= model.min_value() && value <= model.max_value(),
            };
            if !in_support {
                return Err(ScenarioError::OutOfSupport {
                    element: id.to_string(),
                    value,
                });
            }
            r.set(e, value);
        }
        Ok(r)
    }

    pub fn to_scenario(&self, net: &Network, seed_tag: String) -> Scenario {
        let mut s = Scenario {
            realized: BTreeMap::new(),
            realized_delays: BTreeMap::new(),
            seed_tag,
        };
        for &e in &net.elements {
            let id = net.element_id(e).to_string();
            match e {
                Element::Activity(_) => s.realized.insert(id, self.get(e)),
                Element::Delay(_) => s.realized_delays.insert(id, self.get(e)),
            };
        }
        s
    }
}

pub fn seed_tag(master_seed: u64, index: u64) -> String {
    format!("{master_seed}:{index}")
}

/// Scenario `index` of the stream family `master_seed`.
pub fn sample_scenario(model: &MissionModel, master_seed: u64, index: u64) -> Scenario {
    Realization::sample(&model.net, master_seed, index).to_scenario(&model.net, seed_tag(master_seed, index))
}

/// Scenario in which every element takes its nominal value.
pub fn nominal_scenario(model: &MissionModel) -> Scenario {
    Realization::nominal(&model.net).to_scenario(&model.net, "nominal".into())
}

/// Size of the full support, saturating.
pub(crate) fn support_size(net: &Network) -> Result<u128, ScenarioError> {
    let mut size: u128 = 1;
    for &e in &net.elements {
        let s = net
            .element_model(e)
            .support()
            .ok_or_else(|| ScenarioError::Continuous(net.element_id(e).to_string()))?;
        size = size.saturating_mul(s.len() as u128);
    }
    Ok(size)
}

fn log10_support(net: &Network) -> f64 {
    net.elements
        .iter()
        .map(|&e| net.element_model(e).support().map_or(0.0, |s| (s.len() as f64).log10()))
        .sum()
}

/// All realizations with their probabilities, last element varying fastest.
/// Probabilities multiply in element order starting from 1.
pub(crate) fn enumerate_realizations(net: &Network, cap: u64) -> Result<Vec<(Realization, f64)>, ScenarioError> {
    let size = support_size(net)?;
    if size > cap as u128 {
        return Err(ScenarioError::CapExceeded {
            size: 10f64.powf(log10_support(net)),
            cap,
        });
    }
    let supports: Vec<Vec<(Minute, f64)>> = net
        .elements
        .iter()
        .map(|&e| net.element_model(e).support().expect("checked above"))
        .collect();
    let mut out = Vec::with_capacity(size as usize);
    let mut digits = vec![0usize; supports.len()];
    let base = Realization::nominal(net);
    loop {
        let mut r = base.clone();
        let mut p = 1.0;
        for (k, &e) in net.elements.iter().enumerate() {
            let (v, pv) = supports[k][digits[k]];
            r.set(e, v);
            p *= pv;
        }
        out.push((r, p));
        // odometer increment
        let mut k = supports.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < supports[k].len() {
                break;
            }
            digits[k] = 0;
        }
    }
}

/// Exhaustive support of an all-discrete mission with the default cap.
pub fn enumerate_scenarios(model: &MissionModel) -> Result<Vec<(Scenario, f64)>, ScenarioError> {
    enumerate_scenarios_capped(model, DEFAULT_SUPPORT_CAP)
}

pub fn enumerate_scenarios_capped(model: &MissionModel, cap: u64) -> Result<Vec<(Scenario, f64)>, ScenarioError> {
    let net = &model.net;
    Ok(enumerate_realizations(net, cap)?
        .into_iter()
        .enumerate()
        .map(|(i, (r, p))| (r.to_scenario(net, format!("enum:{i}")), p))
        .collect())
}

/// Line-oriented export: a header naming the elements in canonical order,
/// then one tab-separated line per scenario. Probabilities, when given, form
/// the last column.
pub fn write_scenario_lines(model: &MissionModel, scenarios: &[Scenario], probabilities: Option<&[f64]>) -> String {
    let ids = model.stochastic_element_ids();
    let mut out = String::from("#seed_tag");
    for id in &ids {
        out.push('\t');
        out.push_str(id);
    }
    if probabilities.is_some() {
        out.push_str("\tprobability");
    }
    out.push('\n');
    for (k, s) in scenarios.iter().enumerate() {
        out.push_str(&s.seed_tag);
        for &e in &model.net.elements {
            let id = model.net.element_id(e);
            let v = match e {
                Element::Activity(_) => s.realized.get(id),
                Element::Delay(_) => s.realized_delays.get(id),
            };
            match v {
                Some(v) => write!(out, "\t{v}").unwrap(),
                None => out.push_str("\t-"),
            }
        }
        if let Some(ps) = probabilities {
            write!(out, "\t{}", ps[k]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parse the output of [`write_scenario_lines`] (the probability column, if
/// present, is returned alongside).
pub fn parse_scenario_lines(model: &MissionModel, text: &str) -> Result<Vec<(Scenario, Option<f64>)>, ScenarioError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ScenarioError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split('\t').collect();
    if cols.first() != Some(&"#seed_tag") {
        return Err(ScenarioError::Parse {
            line: 1,
            message: "header must start with #seed_tag".into(),
        });
    }
    let has_p = cols.last() == Some(&"probability");
    let ids = &cols[1..cols.len() - usize::from(has_p)];
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols.len() {
            return Err(ScenarioError::Parse {
                line: n + 1,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        let mut s = Scenario {
            realized: BTreeMap::new(),
            realized_delays: BTreeMap::new(),
            seed_tag: fields[0].to_string(),
        };
        for (id, raw) in ids.iter().zip(&fields[1..]) {
            if *raw == "-" {
                continue;
            }
            let v: Minute = raw.parse().map_err(|_| ScenarioError::Parse {
                line: n + 1,
                message: format!("bad value `{raw}`"),
            })?;
            if model.net.index.contains_key(*id) {
                s.realized.insert(id.to_string(), v);
            } else if model.net.constraint_index.contains_key(*id) {
                s.realized_delays.insert(id.to_string(), v);
            } else {
                return Err(ScenarioError::UnknownElement(id.to_string()));
            }
        }
        let p = if has_p {
            Some(fields[fields.len() - 1].parse().map_err(|_| ScenarioError::Parse {
                line: n + 1,
                message: "bad probability".into(),
            })?)
        } else {
            None
        };
        out.push((s, p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{Activity, MissionCalendar, ModelFile, ProjectModel, WorkWindow};

    fn model_with(durations: Vec<DurationModel>) -> MissionModel {
        let mut p = ProjectModel::new("p", "P");
        for (i, d) in durations.into_iter().enumerate() {
            p.activities.push(Activity::new(format!("a{i}"), d));
        }
        ModelFile::new(MissionCalendar::new(1, vec![WorkWindow(0, 1440)]), vec![], vec![p])
            .to_mission()
            .unwrap()
    }

    #[test]
    fn degenerate_pert_is_constant() {
        let mut rng = stream_rng(1, 2, 3);
        for _ in 0..100 {
            assert_eq!(sample_duration(&DurationModel::pert(60, 60, 60), &mut rng), 60);
        }
    }

    #[test]
    fn discrete_frequencies() {
        let d = DurationModel::uniform(&[1440, 2880, 4320]);
        let mut rng = stream_rng(7, 0, 0);
        let n = 100_000;
        let mut counts = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(sample_duration(&d, &mut rng)).or_insert(0usize) += 1;
        }
        for v in [1440, 2880, 4320] {
            let f = counts[&v] as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "{v}: {f}");
        }
    }

    #[test]
    fn truncated_pert_respects_bound() {
        let d = DurationModel::pert(20, 40, 60).conditioned_on_elapsed(50);
        let mut rng = stream_rng(3, 0, 0);
        for _ in 0..2000 {
            let v = sample_duration(&d, &mut rng);
            assert!((50..=60).contains(&v), "{v}");
        }
    }

    #[test]
    fn no_stochastic_elements_gives_empty_maps() {
        let m = model_with(vec![DurationModel::fixed(5)]);
        let s = sample_scenario(&m, 1, 0);
        assert!(s.realized.is_empty() && s.realized_delays.is_empty());
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = model_with(vec![DurationModel::pert(10, 20, 90), DurationModel::uniform(&[1, 2, 3])]);
        assert_eq!(sample_scenario(&m, 42, 17), sample_scenario(&m, 42, 17));
        assert_ne!(sample_scenario(&m, 42, 17).seed_tag, sample_scenario(&m, 42, 18).seed_tag);
    }

    #[test]
    fn enumeration_product_rule() {
        let m = model_with((0..4).map(|_| DurationModel::uniform(&[1, 2, 3])).collect());
        let all = enumerate_scenarios(&m).unwrap();
        assert_eq!(all.len(), 81);
        let total: f64 = all.iter().map(|s| s.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(all.iter().all(|s| s.1 > 0.0));
    }

    #[test]
    fn deterministic_enumerates_to_one() {
        let m = model_with(vec![DurationModel::fixed(30)]);
        let all = enumerate_scenarios(&m).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].1, 1.0);
    }

    #[test]
    fn enumeration_cap() {
        let values: Vec<Minute> = (20..40).collect();
        let m = model_with((0..40).map(|_| DurationModel::uniform(&values)).collect());
        match enumerate_scenarios(&m) {
            Err(ScenarioError::CapExceeded { size, .. }) => {
                assert!((size.log10() - 52.04).abs() < 0.01, "{size}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let cont = model_with(vec![DurationModel::pert(1, 2, 3)]);
        assert_eq!(
            enumerate_scenarios(&cont).unwrap_err(),
            ScenarioError::Continuous("p/a0".into())
        );
    }

    #[test]
    fn scenario_lines_round_trip() {
        let file = fixtures::four_task_model(DurationModel::uniform(&[60, 90]));
        let m = file.to_mission().unwrap();
        let all = enumerate_scenarios(&m).unwrap();
        let scen: Vec<Scenario> = all.iter().map(|s| s.0.clone()).collect();
        let ps: Vec<f64> = all.iter().map(|s| s.1).collect();
        let text = write_scenario_lines(&m, &scen, Some(&ps));
        assert!(text.starts_with("#seed_tag\tdemo/A\tprobability\n"));
        let back = parse_scenario_lines(&m, &text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].0, scen[1]);
        assert_eq!(back[1].1, Some(0.5));
    }

    #[test]
    fn incomplete_scenario_is_rejected() {
        let m = model_with(vec![DurationModel::uniform(&[1, 2])]);
        let s = Scenario {
            realized: BTreeMap::new(),
            realized_delays: BTreeMap::new(),
            seed_tag: "x".into(),
        };
        assert_eq!(
            Realization::from_scenario(&m.net, &s).unwrap_err(),
            ScenarioError::Incomplete("p/a0".into())
        );
    }
}
