//! Index-based compilation of a mission model used by the hot paths
//! (sampling, dispatch, enumeration).

use std::collections::HashMap;

use crate::model::{
    Activity, Anchor, DurationModel, MissionCalendar, Resource, ResourceKind, TemporalConstraint,
};
use crate::Minute;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Element {
    Activity(usize),
    Delay(usize),
}

#[derive(Debug)]
pub(crate) struct ActNode {
    pub duration: DurationModel,
    pub static_reqs: Vec<(usize, u32)>,
    pub eligible: Vec<usize>,
    pub crew_needed: u32,
    pub earliest: Option<Minute>,
    pub latest_end: Option<Minute>,
    pub daily: Option<(Minute, Minute)>,
    pub same_sol: bool,
    pub fixed_start: Option<Minute>,
    pub cost: f64,
}

#[derive(Debug)]
pub(crate) struct ConsNode {
    pub from: usize,
    pub from_anchor: Anchor,
    pub to: usize,
    pub to_anchor: Anchor,
    pub delay: DurationModel,
    pub max_delay: Option<Minute>,
    pub same_sol: bool,
}

#[derive(Debug)]
pub(crate) struct Network {
    pub calendar: MissionCalendar,
    pub horizon_end: Minute,
    pub release: Minute,
    pub ids: Vec<String>,
    pub index: HashMap<String, usize>,
    pub constraint_ids: Vec<String>,
    pub constraint_index: HashMap<String, usize>,
    pub acts: Vec<ActNode>,
    pub cons: Vec<ConsNode>,
    pub resource_ids: Vec<String>,
    pub resource_index: HashMap<String, usize>,
    pub capacities: Vec<u32>,
    pub is_crew: Vec<bool>,
    /// Constraint indices grouped by target activity.
    pub incoming: Vec<Vec<usize>>,
    /// Distinct predecessor activities (any constraint into the activity).
    pub preds: Vec<Vec<usize>>,
    /// Random elements in canonical order: activities, then delays.
    pub elements: Vec<Element>,
}

impl Network {
    pub fn compile(
        calendar: &MissionCalendar,
        resources: &[Resource],
        activities: &[Activity],
        constraints: &[TemporalConstraint],
    ) -> Self {
        let resource_index: HashMap<String, usize> =
            resources.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        let index: HashMap<String, usize> = activities.iter().enumerate().map(|(i, a)| (a.id.clone(), i)).collect();

        let acts: Vec<ActNode> = activities
            .iter()
            .map(|a| {
                let w = a.window.clone().unwrap_or_default();
                ActNode {
                    duration: a.duration.clone(),
                    static_reqs: a
                        .requirements
                        .iter()
                        .filter_map(|(r, q)| resource_index.get(r).map(|&i| (i, *q)))
                        .collect(),
                    eligible: a.eligible_crew.iter().filter_map(|c| resource_index.get(c).copied()).collect(),
                    crew_needed: a.crew_needed(),
                    earliest: w.earliest_start,
                    latest_end: w.latest_end,
                    daily: w.daily.map(|d| (Minute::from(d.0), Minute::from(d.1))),
                    same_sol: a.same_sol_required,
                    fixed_start: a.fixed_start,
                    cost: a.cost,
                }
            })
            .collect();

        let cons: Vec<ConsNode> = constraints
            .iter()
            .map(|c| ConsNode {
                from: index[&c.from_event.activity_id],
                from_anchor: c.from_event.anchor,
                to: index[&c.to_event.activity_id],
                to_anchor: c.to_event.anchor,
                delay: c.min_delay.as_model(),
                max_delay: c.max_delay,
                same_sol: c.same_sol,
            })
            .collect();

        let mut incoming = vec![Vec::new(); acts.len()];
        let mut preds = vec![Vec::new(); acts.len()];
        for (j, c) in cons.iter().enumerate() {
            incoming[c.to].push(j);
            if !preds[c.to].contains(&c.from) {
                preds[c.to].push(c.from);
            }
        }

        let mut elements = Vec::new();
        for (i, a) in acts.iter().enumerate() {
            if a.duration.is_stochastic() {
                elements.push(Element::Activity(i));
            }
        }
        for (j, c) in cons.iter().enumerate() {
            if c.delay.is_stochastic() {
                elements.push(Element::Delay(j));
            }
        }

        Network {
            calendar: calendar.clone(),
            horizon_end: calendar.horizon_end(),
            release: calendar.release.unwrap_or(0),
            ids: activities.iter().map(|a| a.id.clone()).collect(),
            index,
            constraint_ids: constraints.iter().map(|c| c.id.clone()).collect(),
            constraint_index: constraints.iter().enumerate().map(|(j, c)| (c.id.clone(), j)).collect(),
            acts,
            cons,
            resource_ids: resources.iter().map(|r| r.id.clone()).collect(),
            resource_index,
            capacities: resources.iter().map(|r| r.capacity).collect(),
            is_crew: resources.iter().map(|r| r.kind == ResourceKind::CrewMember).collect(),
            incoming,
            preds,
            elements,
        }
    }

    pub fn len(&self) -> usize {
        self.acts.len()
    }

    /// Stable key of an element for counter-based random streams.
    pub fn element_key(&self, e: Element) -> u64 {
        match e {
            Element::Activity(i) => i as u64,
            Element::Delay(j) => (self.acts.len() + j) as u64,
        }
    }

    pub fn element_model(&self, e: Element) -> &DurationModel {
        match e {
            Element::Activity(i) => &self.acts[i].duration,
            Element::Delay(j) => &self.cons[j].delay,
        }
    }

    pub fn element_id(&self, e: Element) -> &str {
        match e {
            Element::Activity(i) => &self.ids[i],
            Element::Delay(j) => &self.constraint_ids[j],
        }
    }
}
