//! Seeded synthetic instances: a mission-scale generator and small random
//! networks for property tests and benchmarks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    Activity, DurationModel, MissionCalendar, ModelFile, ProjectModel, Resource, TemporalConstraint, WorkWindow,
};
use crate::Minute;

/// Knobs for [`random_instance`].
#[derive(Debug, Clone)]
pub struct InstanceParams {
    pub min_activities: usize,
    pub max_activities: usize,
    /// Largest support size of a duration.
    pub max_values: usize,
    /// Number of equipment resources (capacity 1 or 2).
    pub equipment: usize,
    /// Number of crew members; each activity then needs one of them.
    pub crew: usize,
    pub horizon_sols: u32,
    pub work_windows: Vec<WorkWindow>,
    pub edge_probability: f64,
    pub allow_same_sol: bool,
    pub allow_max_delay: bool,
    pub allow_windows: bool,
    pub allow_random_delays: bool,
}

impl InstanceParams {
    /// At most five activities with up to three outcomes each and at most two
    /// resources; small enough for exhaustive enumeration.
    pub fn small() -> Self {
        Self {
            min_activities: 1,
            max_activities: 5,
            max_values: 3,
            equipment: 2,
            crew: 0,
            horizon_sols: 2,
            work_windows: vec![WorkWindow(480, 780)],
            edge_probability: 0.35,
            allow_same_sol: true,
            allow_max_delay: true,
            allow_windows: true,
            allow_random_delays: true,
        }
    }

    /// Ten activities with two outcomes each, two crew members and a unit
    /// laminar-flow cabinet over three sols.
    pub fn ten_activities() -> Self {
        Self {
            min_activities: 10,
            max_activities: 10,
            max_values: 2,
            equipment: 1,
            crew: 2,
            horizon_sols: 3,
            work_windows: vec![WorkWindow(480, 720), WorkWindow(780, 1020)],
            edge_probability: 0.2,
            allow_same_sol: true,
            allow_max_delay: true,
            allow_windows: true,
            allow_random_delays: false,
        }
    }

    /// Same shape as [`InstanceParams::small`] without constraints that can
    /// turn a later event into a success.
    pub fn monotone() -> Self {
        Self {
            allow_same_sol: false,
            allow_max_delay: false,
            ..Self::small()
        }
    }
}

fn discrete_duration(rng: &mut ChaCha8Rng, max_values: usize, grid: &[Minute]) -> DurationModel {
    let k = rng.random_range(1..=max_values.max(1));
    let mut values: Vec<Minute> = grid.choose_multiple(rng, k).copied().collect();
    values.sort_unstable();
    if k == 1 {
        return DurationModel::fixed(values[0]);
    }
    let weights: Vec<u32> = (0..k).map(|_| rng.random_range(1..=4)).collect();
    let total: u32 = weights.iter().sum();
    DurationModel::discrete(values.into_iter().zip(weights).map(|(v, w)| (v, f64::from(w) / f64::from(total))))
}

/// A random all-discrete single-project instance (project id `p`,
/// activities `a0`, `a1`, ...). Constraints only point from lower to higher
/// index, so the network is acyclic.
pub fn random_instance(seed: u64, params: &InstanceParams) -> ModelFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(params.min_activities..=params.max_activities);
    let grid: Vec<Minute> = (2..=16).map(|k| k * 15).collect();
    let calendar = MissionCalendar::new(params.horizon_sols, params.work_windows.clone());
    let first = params.work_windows.first().map_or(0, |w| w.0);
    let last = params.work_windows.last().map_or(1440, |w| w.1);

    let mut resources: Vec<Resource> = (0..params.equipment)
        .map(|k| Resource::equipment(format!("eq{k}"), rng.random_range(1..=2)))
        .collect();
    let crew: Vec<String> = (0..params.crew).map(|k| format!("crew{k}")).collect();
    resources.extend(crew.iter().map(Resource::crew));

    let mut p = ProjectModel::new("p", "Random");
    for i in 0..n {
        let mut a = Activity::new(format!("a{i}"), discrete_duration(&mut rng, params.max_values, &grid));
        for r in resources.iter().take(params.equipment) {
            if rng.random_bool(0.5) {
                a = a.requires(r.id.clone(), 1);
            }
        }
        if !crew.is_empty() {
            let mut eligible: Vec<String> = crew.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
            if eligible.is_empty() {
                eligible.push(crew.choose(&mut rng).expect("nonempty").clone());
            }
            a = a.crew(eligible, 1);
        }
        if params.allow_windows && rng.random_bool(0.2) {
            let start = rng.random_range(first..=first + 120);
            let end = (start + rng.random_range(240..=420)).min(last);
            a = a.daily_window(start, end);
        }
        if params.allow_windows && rng.random_bool(0.1) {
            let sol = rng.random_range(0..params.horizon_sols) as i64;
            a = a.between(None, Some(calendar.at(sol, Minute::from(last))));
        }
        p.activities.push(a);
    }
    for j in 1..n {
        for i in 0..j {
            if !rng.random_bool(params.edge_probability) {
                continue;
            }
            let delay = *[0, 0, 30, 60].choose(&mut rng).expect("nonempty");
            let mut c = TemporalConstraint::precedence(format!("c{i}_{j}"), format!("a{i}"), format!("a{j}"), delay);
            if params.allow_random_delays && rng.random_bool(0.15) {
                c = c.with_random_delay(DurationModel::uniform(&[0, 60]));
            }
            if params.allow_same_sol && rng.random_bool(0.15) {
                c = c.with_same_sol();
            }
            if params.allow_max_delay && rng.random_bool(0.15) {
                c = c.with_max_delay(delay + rng.random_range(60..=480));
            }
            p.constraints.push(c);
        }
    }
    ModelFile::new(calendar, resources, vec![p])
}

const CREW: [&str; 6] = ["commander", "engineer", "scientist", "biologist", "geologist", "journalist"];

struct ProjectSpec {
    id: &'static str,
    name: &'static str,
    size: usize,
    uses_laf: bool,
    eva: bool,
    sol_delay: bool,
}

const PROJECTS: [ProjectSpec; 8] = [
    ProjectSpec { id: "exfix", name: "Exoskeleton fixation", size: 24, uses_laf: false, eva: true, sol_delay: false },
    ProjectSpec { id: "bact", name: "Bacteria growth", size: 22, uses_laf: true, eva: false, sol_delay: true },
    ProjectSpec { id: "biofert", name: "Biofertilizers", size: 20, uses_laf: true, eva: false, sol_delay: false },
    ProjectSpec { id: "radar", name: "Ground radar survey", size: 20, uses_laf: false, eva: true, sol_delay: false },
    ProjectSpec { id: "drone", name: "Drone mapping", size: 20, uses_laf: false, eva: true, sol_delay: false },
    ProjectSpec { id: "sleep", name: "Sleep study", size: 20, uses_laf: false, eva: false, sol_delay: false },
    ProjectSpec { id: "plants", name: "Greenhouse plants", size: 18, uses_laf: true, eva: false, sol_delay: false },
    ProjectSpec { id: "geo", name: "Geology samples", size: 18, uses_laf: false, eva: true, sol_delay: false },
];

/// A mission of 8 projects and 162 activities over 12 sols with six crew
/// members, a unit laminar-flow cabinet (`LAF`), two rovers and PERT
/// durations. One project waits a random 1 to 3 sols between inoculation
/// and observation.
pub fn synthetic_mission(seed: u64) -> ModelFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calendar = MissionCalendar::new(12, vec![WorkWindow(480, 720), WorkWindow(780, 1080)]);
    let mut resources: Vec<Resource> = CREW.iter().map(|c| Resource::crew(*c)).collect();
    resources.push(Resource::equipment("LAF", 1));
    resources.push(Resource::equipment("rover", 2));

    let mut projects = Vec::new();
    for spec in &PROJECTS {
        let mut p = ProjectModel::new(spec.id, spec.name);
        let mut team: Vec<&str> = CREW.to_vec();
        team.shuffle(&mut rng);
        team.truncate(rng.random_range(2..=4));
        for i in 0..spec.size {
            let mode = rng.random_range(2..=8) * 10;
            let min = mode - rng.random_range(1..=mode / 10) * 5;
            let max = mode + rng.random_range(1..=4) * 10;
            let mut a = Activity::new(format!("t{i:02}"), DurationModel::pert(min, mode, max));
            let is_eva = spec.eva && i % 5 == 2;
            a = if is_eva {
                a.crew(team.iter().copied(), 2).requires("rover", 1).daily_window(540, 720)
            } else {
                a.crew(team.iter().copied(), 1)
            };
            if spec.uses_laf && i % 3 == 1 {
                a = a.requires("LAF", 1);
            }
            a.cost = f64::from(rng.random_range(1..=5));
            p.activities.push(a);
        }
        // a chain with occasional skip edges
        for i in 1..spec.size {
            let mut c = TemporalConstraint::precedence(format!("c{i:02}"), format!("t{:02}", i - 1), format!("t{i:02}"), 0);
            if spec.sol_delay && i == 6 {
                c = c.with_random_delay(DurationModel::uniform(&[1440, 2880, 4320]));
            }
            p.constraints.push(c);
            if i >= 3 && rng.random_bool(0.2) {
                let from = rng.random_range(0..i - 1);
                p.constraints.push(TemporalConstraint::precedence(
                    format!("s{from:02}_{i:02}"),
                    format!("t{from:02}"),
                    format!("t{i:02}"),
                    30,
                ));
            }
        }
        projects.push(p);
    }
    ModelFile::new(calendar, resources, projects)
}
