//! Reference success probability for all-discrete models without crew
//! written directly against the model file. Every scenario of the joint
//! support is enumerated and dispatched with a minute-by-minute scan.
//!
//! Probabilities are multiplied and summed in the same element and odometer
//! order as the engine, so the two results can be compared bit for bit.

use std::collections::HashMap;

use rams_core::model::{Anchor, Delay};
use rams_core::{DurationModel, Minute, ModelFile};

struct Act {
    id: String,
    duration: DurationModel,
    reqs: Vec<(usize, u32)>,
    earliest: Option<Minute>,
    latest_end: Option<Minute>,
    daily: Option<(Minute, Minute)>,
    same_sol: bool,
}

struct Cons {
    from: usize,
    from_end: bool,
    to: usize,
    to_end: bool,
    delay: DurationModel,
    max: Option<Minute>,
    same_sol: bool,
}

/// (is an activity, activity or constraint index, support)
type Element = (bool, usize, Vec<(Minute, f64)>);

pub struct Reference {
    acts: Vec<Act>,
    cons: Vec<Cons>,
    capacity: Vec<u32>,
    mps: Minute,
    sols: Minute,
    windows: Vec<(Minute, Minute)>,
    release: Minute,
}

fn qualify(project: &str, id: &str) -> String {
    if id.contains('/') {
        id.to_string()
    } else {
        format!("{project}/{id}")
    }
}

impl Reference {
    pub fn new(file: &ModelFile) -> Self {
        let res: HashMap<&str, usize> = file.resources.iter().enumerate().map(|(k, r)| (r.id.as_str(), k)).collect();
        let mut acts = Vec::new();
        for p in &file.projects {
            for a in &p.activities {
                assert!(a.eligible_crew.is_empty() && a.fixed_start.is_none(), "reference covers static resources only");
                let mut reqs: Vec<(usize, u32)> = Vec::new();
                for (r, q) in &a.requirements {
                    let k = res[r.as_str()];
                    match reqs.iter_mut().find(|x| x.0 == k) {
                        Some(x) => x.1 += q,
                        None => reqs.push((k, *q)),
                    }
                }
                let w = a.window.clone().unwrap_or_default();
                acts.push(Act {
                    id: qualify(&p.id, &a.id),
                    duration: a.duration.clone(),
                    reqs,
                    earliest: w.earliest_start,
                    latest_end: w.latest_end,
                    daily: w.daily.map(|d| (Minute::from(d.0), Minute::from(d.1))),
                    same_sol: a.same_sol_required,
                });
            }
        }
        let index: HashMap<String, usize> = acts.iter().enumerate().map(|(k, a)| (a.id.clone(), k)).collect();
        let mut cons = Vec::new();
        for p in &file.projects {
            for c in &p.constraints {
                cons.push(Cons {
                    from: index[&qualify(&p.id, &c.from_event.activity_id)],
                    from_end: c.from_event.anchor == Anchor::End,
                    to: index[&qualify(&p.id, &c.to_event.activity_id)],
                    to_end: c.to_event.anchor == Anchor::End,
                    delay: match &c.min_delay {
                        Delay::Fixed(v) => DurationModel::fixed(*v),
                        Delay::Random(m) => m.clone(),
                    },
                    max: c.max_delay,
                    same_sol: c.same_sol,
                });
            }
        }
        let cal = &file.calendar;
        Self {
            acts,
            cons,
            capacity: file.resources.iter().map(|r| r.capacity).collect(),
            mps: Minute::from(cal.minutes_per_sol),
            sols: Minute::from(cal.horizon_sols),
            windows: cal.work_windows.iter().map(|w| (Minute::from(w.0), Minute::from(w.1))).collect(),
            release: cal.release.unwrap_or(0),
        }
    }

    /// Success probability of the priority order `order` (qualified ids).
    pub fn probability(&self, order: &[String]) -> f64 {
        let list = self.dispatch_list(order);
        let points = |m: &DurationModel| -> Vec<(Minute, f64)> {
            match m {
                DurationModel::Deterministic { value } => vec![(*value, 1.0)],
                DurationModel::Discrete { outcomes } => outcomes.clone(),
                DurationModel::ModifiedPert { min, max, .. } if min == max => vec![(*min, 1.0)],
                DurationModel::ModifiedPert { .. } => panic!("continuous duration"),
            }
        };
        let is_random = |m: &DurationModel| !matches!(m, DurationModel::Deterministic { .. });
        let mut elements: Vec<Element> = Vec::new();
        for (i, a) in self.acts.iter().enumerate() {
            if is_random(&a.duration) {
                elements.push((true, i, points(&a.duration)));
            }
        }
        for (j, c) in self.cons.iter().enumerate() {
            if is_random(&c.delay) {
                elements.push((false, j, points(&c.delay)));
            }
        }
        let mut durations: Vec<Minute> = self.acts.iter().map(|a| points(&a.duration)[0].0).collect();
        let mut delays: Vec<Minute> = self.cons.iter().map(|c| points(&c.delay)[0].0).collect();

        let mut total = 0.0;
        let mut digits = vec![0usize; elements.len()];
        loop {
            let mut p = 1.0;
            for (k, (is_act, idx, support)) in elements.iter().enumerate() {
                let (v, pv) = support[digits[k]];
                if *is_act {
                    durations[*idx] = v;
                } else {
                    delays[*idx] = v;
                }
                p *= pv;
            }
            if self.succeeds(&list, &durations, &delays) {
                total += p;
            }
            let mut k = elements.len();
            loop {
                if k == 0 {
                    return total.clamp(0.0, 1.0);
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < elements[k].2.len() {
                    break;
                }
                digits[k] = 0;
            }
        }
    }

    /// Repeatedly take the earliest-priority activity whose predecessors are
    /// all placed.
    fn dispatch_list(&self, order: &[String]) -> Vec<usize> {
        let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
        let n = self.acts.len();
        let mut placed = vec![false; n];
        let mut list = Vec::with_capacity(n);
        while list.len() < n {
            let next = (0..n)
                .filter(|&i| !placed[i])
                .filter(|&i| self.cons.iter().all(|c| c.to != i || placed[c.from]))
                .min_by_key(|&i| (pos[self.acts[i].id.as_str()], i))
                .expect("acyclic");
            placed[next] = true;
            list.push(next);
        }
        list
    }

    fn fits_calendar(&self, i: usize, t: Minute, d: Minute) -> bool {
        (0..self.sols).any(|s| {
            self.windows.iter().any(|&(a, b)| {
                let (mut lo, mut hi) = (s * self.mps + a, s * self.mps + b);
                if let Some((da, db)) = self.acts[i].daily {
                    lo = lo.max(s * self.mps + da);
                    hi = hi.min(s * self.mps + db);
                }
                lo <= hi && lo <= t && t + d <= hi
            })
        })
    }

    fn succeeds(&self, list: &[usize], dur: &[Minute], delay: &[Minute]) -> bool {
        let horizon = self.sols * self.mps;
        let sol = |t: Minute| t.div_euclid(self.mps);
        let n = self.acts.len();
        let mut start: Vec<Option<Minute>> = vec![None; n];
        let mut used: Vec<Vec<u32>> = self.capacity.iter().map(|_| vec![0; horizon as usize]).collect();
        let mut last_start = vec![Minute::MIN; self.capacity.len()];
        let event = |start: &[Option<Minute>], i: usize, end: bool| start[i].map(|s| if end { s + dur[i] } else { s });
        let event_sol = |t: Minute, i: usize, end: bool| if end && dur[i] > 0 { sol(t - 1) } else { sol(t) };

        for &i in list {
            let a = &self.acts[i];
            let d = dur[i];
            let mut earliest = a.earliest.unwrap_or(0).max(self.release);
            for (j, c) in self.cons.iter().enumerate().filter(|(_, c)| c.to == i) {
                let tf = event(&start, c.from, c.from_end).expect("predecessor placed");
                let bound = tf + delay[j] - if c.to_end { d } else { 0 };
                earliest = earliest.max(bound);
            }
            for &(r, _) in &a.reqs {
                earliest = earliest.max(last_start[r]);
            }
            let free = |t: Minute, used: &[Vec<u32>]| {
                d == 0
                    || a.reqs.iter().all(|&(r, q)| (t..t + d).all(|m| used[r][m as usize] + q <= self.capacity[r]))
            };
            let Some(t) = (earliest.max(0)..=horizon).find(|&t| self.fits_calendar(i, t, d) && free(t, &used)) else {
                return false;
            };
            let end = t + d;
            start[i] = Some(t);
            for &(r, q) in &a.reqs {
                for m in t..end {
                    used[r][m as usize] += q;
                }
                last_start[r] = last_start[r].max(t);
            }
            if end > horizon || a.latest_end.is_some_and(|le| end > le) {
                return false;
            }
            if a.same_sol && d > 0 && sol(t) != sol(end - 1) {
                return false;
            }
            for (j, c) in self.cons.iter().enumerate().filter(|(_, c)| c.to == i) {
                let tf = event(&start, c.from, c.from_end).expect("predecessor placed");
                let tt = event(&start, i, c.to_end).expect("just placed");
                if tt < tf + delay[j] || c.max.is_some_and(|m| tt > tf + m) {
                    return false;
                }
                if c.same_sol && event_sol(tf, c.from, c.from_end) != event_sol(tt, i, c.to_end) {
                    return false;
                }
            }
        }
        true
    }
}
