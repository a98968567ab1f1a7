//! Decision/scenario trees and backward induction.
//!
//! Decision nodes pick one child (maximize), chance nodes average their
//! children by probability, leaves carry a success indicator. The value at
//! the root is the success probability under perfect reoptimization: each
//! decision is taken knowing everything revealed above it.
//!
//! Nodes live in an arena and every child index is smaller than its
//! parent's, so evaluation is a single forward pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{run_dispatch, DispatchError, Plan, Schedule};
use crate::durations::{Realization, ScenarioError};
use crate::model::MissionModel;
use crate::network::{Element, Network};
use crate::Minute;

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("tree has no root")]
    Empty,
    #[error("tree would exceed {cap} nodes")]
    CapExceeded { cap: usize },
    #[error("tree depth {depth} exceeds the cap of {cap}")]
    DepthExceeded { depth: usize, cap: usize },
    #[error("malformed tree at node {node}: {message}")]
    Malformed { node: usize, message: String },
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Decision { children: Vec<(String, usize)> },
    Chance { children: Vec<(f64, usize)> },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistageValue {
    pub value: f64,
    /// Label chosen at the root, if the root is a decision node.
    pub root_decision: Option<String>,
    /// Chosen child position for every decision node (first maximizer).
    pub policy: BTreeMap<usize, usize>,
}

impl DecisionTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn leaf(&mut self, value: f64) -> usize {
        self.push(Node::Leaf { value })
    }

    pub fn decision(&mut self, children: Vec<(String, usize)>) -> usize {
        self.push(Node::Decision { children })
    }

    pub fn chance(&mut self, children: Vec<(f64, usize)>) -> usize {
        self.push(Node::Chance { children })
    }

    pub fn set_root(&mut self, node: usize) {
        self.root = Some(node);
    }

    fn push(&mut self, node: Node) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Check alternation, probabilities, child ordering and depth.
    pub fn validate(&self, depth_cap: Option<usize>) -> Result<(), TreeError> {
        let root = self.root.ok_or(TreeError::Empty)?;
        if root >= self.nodes.len() {
            return Err(TreeError::Malformed {
                node: root,
                message: "root index out of range".into(),
            });
        }
        let mut depth = vec![0usize; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let malformed = |message: String| TreeError::Malformed { node: i, message };
            let kids: Vec<usize> = match node {
                Node::Leaf { value } => {
                    if !(0.0..=1.0).contains(value) {
                        return Err(malformed(format!("leaf value {value} outside [0, 1]")));
                    }
                    continue;
                }
                Node::Decision { children } => children.iter().map(|c| c.1).collect(),
                Node::Chance { children } => {
                    let sum: f64 = children.iter().map(|c| c.0).sum();
                    if (sum - 1.0).abs() > 1e-9 || children.iter().any(|c| c.0 < 0.0) {
                        return Err(malformed(format!("branch probabilities sum to {sum}")));
                    }
                    children.iter().map(|c| c.1).collect()
                }
            };
            if kids.is_empty() {
                return Err(malformed("inner node without children".into()));
            }
            for &k in &kids {
                if k >= i {
                    return Err(malformed(format!("child {k} is not older than its parent")));
                }
                let alternates = matches!(
                    (node, &self.nodes[k]),
                    (_, Node::Leaf { .. })
                        | (Node::Decision { .. }, Node::Chance { .. })
                        | (Node::Chance { .. }, Node::Decision { .. })
                );
                if !alternates {
                    return Err(malformed(format!("child {k} does not alternate layers")));
                }
                depth[i] = depth[i].max(depth[k] + 1);
            }
        }
        if let Some(cap) = depth_cap {
            if depth[root] > cap {
                return Err(TreeError::DepthExceeded { depth: depth[root], cap });
            }
        }
        Ok(())
    }

    fn values(&self) -> (Vec<f64>, BTreeMap<usize, usize>) {
        let mut value = vec![0.0; self.nodes.len()];
        let mut policy = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            value[i] = match node {
                Node::Leaf { value } => *value,
                Node::Chance { children } => children.iter().map(|&(p, k)| p * value[k]).sum(),
                Node::Decision { children } => {
                    let mut best = (0, f64::NEG_INFINITY);
                    for (pos, (_, k)) in children.iter().enumerate() {
                        if value[*k] > best.1 {
                            best = (pos, value[*k]);
                        }
                    }
                    policy.insert(i, best.0);
                    best.1
                }
            };
        }
        (value, policy)
    }

    /// Value of following a fixed sequence of decision labels: the k-th
    /// decision met on any branch takes label `labels[k]`. `None` when some
    /// decision node offers no such label.
    pub fn sequence_value(&self, labels: &[String]) -> Option<f64> {
        let root = self.root?;
        self.follow(root, labels, 0)
    }

    fn follow(&self, node: usize, labels: &[String], k: usize) -> Option<f64> {
        match &self.nodes[node] {
            Node::Leaf { value } => Some(*value),
            Node::Chance { children } => {
                let mut v = 0.0;
                for &(p, c) in children {
                    v += p * self.follow(c, labels, k)?;
                }
                Some(v)
            }
            Node::Decision { children } => {
                let want = labels.get(k)?;
                let &(_, c) = children.iter().find(|(l, _)| l == want)?;
                self.follow(c, labels, k + 1)
            }
        }
    }
}

/// Backward induction: max at decision nodes, expectation at chance nodes.
pub fn evaluate_multistage(tree: &DecisionTree) -> Result<MultistageValue, TreeError> {
    evaluate_multistage_capped(tree, DEFAULT_NODE_CAP, None)
}

pub fn evaluate_multistage_capped(
    tree: &DecisionTree,
    node_cap: usize,
    depth_cap: Option<usize>,
) -> Result<MultistageValue, TreeError> {
    if tree.len() > node_cap {
        return Err(TreeError::CapExceeded { cap: node_cap });
    }
    tree.validate(depth_cap)?;
    let root = tree.root.expect("validated");
    let (value, policy) = tree.values();
    let root_decision = match &tree.nodes[root] {
        Node::Decision { children } => Some(children[policy[&root]].0.clone()),
        _ => None,
    };
    Ok(MultistageValue {
        value: value[root],
        root_decision,
        policy,
    })
}

/// Options for [`multistage_tree`].
#[derive(Debug, Clone)]
pub struct TreeOptions {
    /// Offer only the next activity of the base schedule at each decision.
    pub fixed_order: bool,
    /// Decisions after this many stages follow the base schedule.
    pub stages: Option<usize>,
    pub node_cap: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            fixed_order: false,
            stages: None,
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

/// Two-layer tree: choose one of `schedules`, then Nature draws the whole
/// scenario. Decision labels are the schedules' positions.
pub fn schedule_choice_tree(model: &MissionModel, schedules: &[Schedule], node_cap: usize) -> Result<DecisionTree, TreeError> {
    let net = &model.net;
    let support = support_of(net, &net.elements)?;
    let mut tree = DecisionTree::new();
    let mut options = Vec::new();
    for (k, s) in schedules.iter().enumerate() {
        let plan = Plan::new(net, s)?;
        let mut branches = Vec::with_capacity(support.len());
        for (values, p) in &support {
            let mut real = Realization::nominal(net);
            for (&e, &v) in net.elements.iter().zip(values) {
                set(&mut real, e, v);
            }
            let leaf = tree.leaf(phi(net, &plan, &real));
            branches.push((*p, leaf));
            if tree.len() > node_cap {
                return Err(TreeError::CapExceeded { cap: node_cap });
            }
        }
        options.push((k.to_string(), tree.chance(branches)));
    }
    let root = tree.decision(options);
    tree.set_root(root);
    Ok(tree)
}

/// Sequential tree: each decision picks which activity is dispatched next
/// (among those whose predecessors are already placed); the following
/// chance layer reveals that activity's duration and the delays of its
/// outgoing constraints. Leaves dispatch the chosen sequence under the
/// revealed scenario. Every fixed schedule is one policy in this tree.
pub fn multistage_tree(model: &MissionModel, base: &Schedule, options: &TreeOptions) -> Result<DecisionTree, TreeError> {
    let net = &model.net;
    let plan = Plan::new(net, base)?;
    let mut reveal: Vec<Vec<Element>> = vec![Vec::new(); net.len()];
    for &e in &net.elements {
        match e {
            Element::Activity(i) => reveal[i].push(e),
            Element::Delay(j) => reveal[net.cons[j].from].push(e),
        }
    }
    let mut base_pos = vec![0; net.len()];
    for (k, &i) in plan.order.iter().enumerate() {
        base_pos[i] = k;
    }
    let mut b = Builder {
        net,
        plan: &plan,
        reveal,
        base_pos,
        options,
        tree: DecisionTree::new(),
        seq: plan.order.iter().copied().filter(|&i| net.acts[i].fixed_start.is_some()).collect(),
        chosen: net.acts.iter().map(|a| a.fixed_start.is_some()).collect(),
        real: Realization::nominal(net),
    };
    // pinned activities come first; reveal their uncertainty up front
    let pinned: Vec<Element> = b.seq.iter().flat_map(|&i| b.reveal[i].clone()).collect();
    let root = if pinned.is_empty() {
        b.decision(0)?
    } else {
        b.chance_over(&pinned, &mut |b| b.decision(0))?
    };
    b.tree.set_root(root);
    Ok(b.tree)
}

fn set(real: &mut Realization, e: Element, v: Minute) {
    match e {
        Element::Activity(i) => real.durations[i] = v,
        Element::Delay(j) => real.delays[j] = v,
    }
}

fn phi(net: &Network, plan: &Plan, real: &Realization) -> f64 {
    if run_dispatch(net, plan, real, true).success() {
        1.0
    } else {
        0.0
    }
}

/// Joint support of `elements`, last varying fastest.
fn support_of(net: &Network, elements: &[Element]) -> Result<Vec<(Vec<Minute>, f64)>, TreeError> {
    let mut out = vec![(Vec::new(), 1.0)];
    for &e in elements {
        let s = net
            .element_model(e)
            .support()
            .ok_or_else(|| ScenarioError::Continuous(net.element_id(e).to_string()))?;
        out = out
            .into_iter()
            .flat_map(|(vals, p)| {
                s.iter().map(move |&(v, pv)| {
                    let mut vals = vals.clone();
                    vals.push(v);
                    (vals, p * pv)
                })
            })
            .collect();
    }
    Ok(out)
}

struct Builder<'a> {
    net: &'a Network,
    plan: &'a Plan,
    reveal: Vec<Vec<Element>>,
    base_pos: Vec<usize>,
    options: &'a TreeOptions,
    tree: DecisionTree,
    seq: Vec<usize>,
    chosen: Vec<bool>,
    real: Realization,
}

impl Builder<'_> {
    fn check_cap(&self) -> Result<(), TreeError> {
        if self.tree.len() > self.options.node_cap {
            return Err(TreeError::CapExceeded {
                cap: self.options.node_cap,
            });
        }
        Ok(())
    }

    fn ready(&self) -> Vec<usize> {
        let mut r: Vec<usize> = (0..self.net.len())
            .filter(|&i| !self.chosen[i] && self.net.preds[i].iter().all(|&p| self.chosen[p]))
            .collect();
        r.sort_by_key(|&i| self.base_pos[i]);
        r
    }

    fn leaf(&mut self) -> Result<usize, TreeError> {
        let mut plan = self.plan.clone();
        plan.order = self.seq.clone();
        let v = phi(self.net, &plan, &self.real);
        let id = self.tree.leaf(v);
        self.check_cap()?;
        Ok(id)
    }

    /// Enumerate `elements`, building one child per joint outcome.
    fn chance_over(
        &mut self,
        elements: &[Element],
        child: &mut dyn FnMut(&mut Self) -> Result<usize, TreeError>,
    ) -> Result<usize, TreeError> {
        let support = support_of(self.net, elements)?;
        let mut branches = Vec::with_capacity(support.len());
        for (values, p) in support {
            for (&e, &v) in elements.iter().zip(&values) {
                set(&mut self.real, e, v);
            }
            branches.push((p, child(self)?));
        }
        let id = self.tree.chance(branches);
        self.check_cap()?;
        Ok(id)
    }

    fn decision(&mut self, stage: usize) -> Result<usize, TreeError> {
        let ready = self.ready();
        if ready.is_empty() {
            return self.leaf();
        }
        let limited = self.options.stages.is_some_and(|s| stage >= s);
        if limited {
            return self.rest_of_base();
        }
        let candidates = if self.options.fixed_order { vec![ready[0]] } else { ready };
        let mut children = Vec::with_capacity(candidates.len());
        for c in candidates {
            self.chosen[c] = true;
            self.seq.push(c);
            let elements = self.reveal[c].clone();
            let child = self.chance_over(&elements, &mut |b| b.decision(stage + 1))?;
            self.seq.pop();
            self.chosen[c] = false;
            children.push((self.net.ids[c].clone(), child));
        }
        let id = self.tree.decision(children);
        self.check_cap()?;
        Ok(id)
    }

    /// Complete the sequence in base order and reveal everything left at once.
    fn rest_of_base(&mut self) -> Result<usize, TreeError> {
        let before = self.seq.len();
        let saved = self.chosen.clone();
        loop {
            let ready = self.ready();
            let Some(&next) = ready.first() else { break };
            self.chosen[next] = true;
            self.seq.push(next);
        }
        let rest: Vec<usize> = self.seq[before..].to_vec();
        let elements: Vec<Element> = rest.iter().flat_map(|&i| self.reveal[i].clone()).collect();
        let label = rest.iter().map(|&i| self.net.ids[i].as_str()).collect::<Vec<_>>().join(",");
        let chance = self.chance_over(&elements, &mut |b| b.leaf())?;
        self.seq.truncate(before);
        self.chosen = saved;
        let id = self.tree.decision(vec![(label, chance)]);
        self.check_cap()?;
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::DispatchProtocol;
    use crate::fixtures::{four_task_model, four_task_order};
    use crate::model::DurationModel;
    use crate::robustness::exact_robustness;

    fn coin() -> MissionModel {
        four_task_model(DurationModel::uniform(&[60, 90])).to_mission().unwrap()
    }

    #[test]
    fn choosing_between_two_orders() {
        let m = coin();
        let tree = schedule_choice_tree(&m, &[four_task_order("ABCD"), four_task_order("ACBD")], 1000).unwrap();
        assert_eq!(tree.len(), 7);
        let v = evaluate_multistage(&tree).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.root_decision.as_deref(), Some("1"));
    }

    #[test]
    fn deterministic_chance_nodes_give_plain_feasibility() {
        let mut t = DecisionTree::new();
        let bad = t.leaf(0.0);
        let good = t.leaf(1.0);
        let c1 = t.chance(vec![(1.0, bad)]);
        let c2 = t.chance(vec![(1.0, good)]);
        let root = t.decision(vec![("x".into(), c1), ("y".into(), c2)]);
        t.set_root(root);
        let v = evaluate_multistage(&t).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.root_decision.as_deref(), Some("y"));
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let mut t = DecisionTree::new();
        let l = t.leaf(1.0);
        let d1 = t.decision(vec![("a".into(), l)]);
        let d2 = t.decision(vec![("b".into(), d1)]);
        t.set_root(d2);
        assert!(matches!(evaluate_multistage(&t), Err(TreeError::Malformed { .. })));

        let mut t = DecisionTree::new();
        let l = t.leaf(1.0);
        let c = t.chance(vec![(0.4, l), (0.4, l)]);
        t.set_root(c);
        assert!(matches!(evaluate_multistage(&t), Err(TreeError::Malformed { .. })));

        assert_eq!(evaluate_multistage(&DecisionTree::new()), Err(TreeError::Empty));
    }

    #[test]
    fn caps_are_enforced() {
        let m = coin();
        let opts = TreeOptions {
            node_cap: 5,
            ..Default::default()
        };
        assert_eq!(
            multistage_tree(&m, &four_task_order("ABCD"), &opts),
            Err(TreeError::CapExceeded { cap: 5 })
        );
        let tree = multistage_tree(&m, &four_task_order("ABCD"), &TreeOptions::default()).unwrap();
        assert!(matches!(
            evaluate_multistage_capped(&tree, DEFAULT_NODE_CAP, Some(2)),
            Err(TreeError::DepthExceeded { .. })
        ));
    }

    #[test]
    fn sequential_tree_dominates_fixed_orders() {
        let m = coin();
        let tree = multistage_tree(&m, &four_task_order("ABCD"), &TreeOptions::default()).unwrap();
        let root = evaluate_multistage(&tree).unwrap();
        assert_eq!(root.value, 1.0);
        for order in ["ABCD", "ACBD"] {
            let s = four_task_order(order);
            let exact = exact_robustness(&m, &s, DispatchProtocol::Asap).unwrap().p_hat;
            let seq = s.dispatch_list(&m).unwrap();
            assert_eq!(tree.sequence_value(&seq), Some(exact));
            assert!(root.value >= exact);
        }
    }

    #[test]
    fn single_path_equals_exact() {
        let m = coin();
        let opts = TreeOptions {
            fixed_order: true,
            ..Default::default()
        };
        let s = four_task_order("ABCD");
        let tree = multistage_tree(&m, &s, &opts).unwrap();
        let exact = exact_robustness(&m, &s, DispatchProtocol::Asap).unwrap().p_hat;
        assert_eq!(evaluate_multistage(&tree).unwrap().value, exact);
    }

    #[test]
    fn stage_limit_falls_back_to_base_order() {
        let m = coin();
        let opts = TreeOptions {
            stages: Some(1),
            ..Default::default()
        };
        let tree = multistage_tree(&m, &four_task_order("ABCD"), &opts).unwrap();
        // after A only the base continuation remains, so the value is that of ABCD
        assert_eq!(evaluate_multistage(&tree).unwrap().value, 0.5);
    }
}
