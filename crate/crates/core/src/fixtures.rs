//! Small reference models used by tests, examples and the CLI.

use crate::dispatch::Schedule;
use crate::model::{
    Activity, DurationModel, MissionCalendar, ModelFile, ProjectModel, Resource, TemporalConstraint, WorkWindow,
};

/// Four activities sharing one unit resource over a two-sol horizon with a
/// single 09:00-14:00 work window.
///
/// - `A` (duration `a`) precedes `B` and, with a one-hour gap and on the same
///   sol, `C`;
/// - `B` (2 h) is restricted to 09:00-12:00, `C` and `D` take 1 h each;
/// - `D` follows both `B` and `C` and is restricted to 12:00-14:00.
///
/// With `A` at one hour the order A, B, C, D finishes on the first sol; with
/// `A` at 90 minutes `B` slips to the next sol and drags `C` past the
/// same-sol requirement, while A, C, B, D still succeeds.
pub fn four_task_model(a: DurationModel) -> ModelFile {
    let calendar = MissionCalendar::new(2, vec![WorkWindow(540, 840)]);
    let mut p = ProjectModel::new("demo", "Four-task example");
    p.activities = vec![
        Activity::new("A", a).requires("line", 1),
        Activity::new("B", DurationModel::fixed(120)).requires("line", 1).daily_window(540, 720),
        Activity::new("C", DurationModel::fixed(60)).requires("line", 1),
        Activity::new("D", DurationModel::fixed(60)).requires("line", 1).daily_window(720, 840),
    ];
    p.constraints = vec![
        TemporalConstraint::precedence("AB", "A", "B", 0),
        TemporalConstraint::precedence("AC", "A", "C", 60).with_same_sol(),
        TemporalConstraint::precedence("BD", "B", "D", 0),
        TemporalConstraint::precedence("CD", "C", "D", 0),
    ];
    ModelFile::new(calendar, vec![Resource::equipment("line", 1)], vec![p])
}

/// Schedule for [`four_task_model`] from letters, e.g. `"ACBD"`.
pub fn four_task_order(letters: &str) -> Schedule {
    Schedule::from_order(letters.chars().map(|c| format!("demo/{c}")))
}
