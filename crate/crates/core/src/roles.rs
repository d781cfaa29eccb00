//! Liveness, persistence ranges and the Index / State / Parameter classification.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::frontend::ast::{base_name, Cond, Expr, LValue};
use crate::frontend::cfg::{Cfg, NodeId, NodeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Index,
    State,
    Parameter,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Index => "index",
            Role::State => "state",
            Role::Parameter => "parameter",
        })
    }
}

/// Per-node live variable sets (base names).
#[derive(Debug, Clone, PartialEq)]
pub struct LivenessInfo {
    pub live_in: Vec<BTreeSet<String>>,
    pub live_out: Vec<BTreeSet<String>>,
}

fn node_defs(cfg: &Cfg, n: NodeId) -> BTreeSet<String> {
    match &cfg.node(n).kind {
        NodeKind::Entry => cfg.program.decls.iter().map(|d| d.name.clone()).collect(),
        _ => cfg.node(n).def().map(str::to_string).into_iter().collect(),
    }
}

pub fn compute_liveness(cfg: &Cfg) -> LivenessInfo {
    let n = cfg.nodes.len();
    let uses: Vec<_> = cfg.nodes.iter().map(|nd| nd.uses()).collect();
    let defs: Vec<_> = (0..n).map(|k| node_defs(cfg, NodeId(k))).collect();
    let mut live_in = vec![BTreeSet::new(); n];
    let mut live_out = vec![BTreeSet::<String>::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for k in (0..n).rev() {
            let out: BTreeSet<String> =
                cfg.nodes[k].succs.iter().flat_map(|s| live_in[s.0].iter().cloned()).collect();
            let mut inn = uses[k].clone();
            inn.extend(out.iter().filter(|v| !defs[k].contains(*v)).cloned());
            if inn != live_in[k] || out != live_out[k] {
                live_in[k] = inn;
                live_out[k] = out;
                changed = true;
            }
        }
    }
    LivenessInfo { live_in, live_out }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceRange {
    pub variable: String,
    pub nodes: BTreeSet<NodeId>,
    pub edges: Vec<(NodeId, NodeId)>,
    /// False for a definition that is never read.
    pub has_use: bool,
}

/// Connected components of the persistence relation, per variable, ordered by
/// variable and then by first node.
pub fn persistence_ranges(live: &LivenessInfo, cfg: &Cfg) -> Vec<PersistenceRange> {
    let mut vars: BTreeSet<String> = cfg.program.decls.iter().map(|d| d.name.clone()).collect();
    for s in &live.live_in {
        vars.extend(s.iter().cloned());
    }
    let uses: Vec<_> = cfg.nodes.iter().map(|nd| nd.uses()).collect();
    let defs: Vec<_> = (0..cfg.nodes.len()).map(|k| node_defs(cfg, NodeId(k))).collect();
    let mut out = Vec::new();
    for v in &vars {
        let mut uf = UnionFind::new(cfg.nodes.len());
        let mut touched = BTreeSet::new();
        let mut edges = Vec::new();
        for (a, b) in cfg.edges() {
            if live.live_out[a.0].contains(v) && live.live_in[b.0].contains(v) {
                uf.union(a.0, b.0);
                touched.insert(a.0);
                touched.insert(b.0);
                edges.push((a, b));
            }
        }
        for k in 0..cfg.nodes.len() {
            if uses[k].contains(v) || defs[k].contains(v) {
                touched.insert(k);
            }
        }
        let mut comps: BTreeMap<usize, PersistenceRange> = BTreeMap::new();
        for &k in &touched {
            let root = uf.find(k);
            let r = comps.entry(root).or_insert_with(|| PersistenceRange {
                variable: v.clone(),
                nodes: BTreeSet::new(),
                edges: Vec::new(),
                has_use: false,
            });
            r.nodes.insert(NodeId(k));
            r.has_use |= uses[k].contains(v);
        }
        for (a, b) in edges {
            let root = uf.find(a.0);
            comps.get_mut(&root).expect("edge endpoints are touched").edges.push((a, b));
        }
        let mut ranges: Vec<_> = comps.into_values().collect();
        ranges.sort_by_key(|r| r.nodes.iter().next().copied());
        out.extend(ranges);
    }
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Name of each variable at each node it touches, after range renaming.
pub type RangeNames = HashMap<(String, NodeId), String>;

/// Renames variables with several ranges to `v#1`, `v#2`, ... (one name per range).
pub fn rename_by_range(cfg: &Cfg, ranges: &[PersistenceRange]) -> (Cfg, RangeNames) {
    let mut per_var: BTreeMap<&str, Vec<&PersistenceRange>> = BTreeMap::new();
    for r in ranges {
        per_var.entry(&r.variable).or_default().push(r);
    }
    let mut names = RangeNames::new();
    for (v, rs) in &per_var {
        for (k, r) in rs.iter().enumerate() {
            let name = if rs.len() == 1 { v.to_string() } else { format!("{v}#{}", k + 1) };
            for n in &r.nodes {
                names.insert((v.to_string(), *n), name.clone());
            }
        }
    }
    let mut out = cfg.clone();
    for node in &mut out.nodes {
        let id = node.id;
        let f = |v: &str| names.get(&(v.to_string(), id)).cloned().unwrap_or_else(|| v.to_string());
        node.kind = match &node.kind {
            NodeKind::Assign { lhs, rhs } => NodeKind::Assign { lhs: rename_lv(lhs, &f), rhs: rename_expr(rhs, &f) },
            NodeKind::Read { lhs, channel } => NodeKind::Read { lhs: rename_lv(lhs, &f), channel: *channel },
            NodeKind::Write { value } => NodeKind::Write { value: rename_expr(value, &f) },
            NodeKind::Assume { cond } => NodeKind::Assume {
                cond: Cond { lhs: rename_expr(&cond.lhs, &f), op: cond.op, rhs: rename_expr(&cond.rhs, &f) },
            },
            NodeKind::ForInit { index, lo } => NodeKind::ForInit { index: f(index), lo: *lo },
            NodeKind::ForTest { index, hi } => NodeKind::ForTest { index: f(index), hi: *hi },
            NodeKind::ForIncr { index } => NodeKind::ForIncr { index: f(index) },
            other => other.clone(),
        };
    }
    (out, names)
}

fn rename_lv(lv: &LValue, f: &impl Fn(&str) -> String) -> LValue {
    LValue { name: f(&lv.name), indices: lv.indices.iter().map(|e| rename_expr(e, f)).collect() }
}

fn rename_expr(e: &Expr, f: &impl Fn(&str) -> String) -> Expr {
    e.map_vars(&mut |lv| Expr::Var(rename_lv(lv, f)))
}

/// Immediate-dominator-free dominator sets; unreachable nodes get `None`.
pub fn dominators(cfg: &Cfg) -> Vec<Option<BTreeSet<NodeId>>> {
    let n = cfg.nodes.len();
    let preds = cfg.preds();
    let mut reachable = vec![false; n];
    let mut stack = vec![cfg.entry];
    while let Some(x) = stack.pop() {
        if !std::mem::replace(&mut reachable[x.0], true) {
            stack.extend(cfg.node(x).succs.iter().copied());
        }
    }
    let all: BTreeSet<NodeId> = (0..n).filter(|k| reachable[*k]).map(NodeId).collect();
    let mut dom: Vec<BTreeSet<NodeId>> = (0..n).map(|_| all.clone()).collect();
    dom[cfg.entry.0] = BTreeSet::from([cfg.entry]);
    let mut changed = true;
    while changed {
        changed = false;
        for k in 0..n {
            if k == cfg.entry.0 || !reachable[k] {
                continue;
            }
            let mut it = preds[k].iter().filter(|p| reachable[p.0]);
            let mut d = match it.next() {
                Some(p) => dom[p.0].clone(),
                None => BTreeSet::new(),
            };
            for p in it {
                d = d.intersection(&dom[p.0]).copied().collect();
            }
            d.insert(NodeId(k));
            if d != dom[k] {
                dom[k] = d;
                changed = true;
            }
        }
    }
    dom.into_iter().enumerate().map(|(k, d)| reachable[k].then_some(d)).collect()
}

/// Role of every (renamed) variable.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoleMap {
    pub roles: BTreeMap<String, Role>,
    /// Renamed variables that are only ever written, never read.
    #[serde(skip)]
    pub unused: BTreeSet<String>,
}

impl RoleMap {
    pub fn get(&self, name: &str) -> Option<Role> {
        self.roles.get(name).copied()
    }

    /// Collapses `v#k` names back to `v`. Ranges that are never read are
    /// ignored when the variable has a read range; remaining disagreements
    /// resolve State over Index over Parameter.
    pub fn by_source_name(&self) -> BTreeMap<String, Role> {
        let mut groups: BTreeMap<String, Vec<(Role, bool)>> = BTreeMap::new();
        for (name, role) in &self.roles {
            groups.entry(base_name(name).to_string()).or_default().push((*role, !self.unused.contains(name)));
        }
        groups
            .into_iter()
            .map(|(name, rs)| {
                let live: Vec<Role> = rs.iter().filter(|r| r.1).map(|r| r.0).collect();
                let pool: Vec<Role> = if live.is_empty() { rs.iter().map(|r| r.0).collect() } else { live };
                let role = [Role::State, Role::Index, Role::Parameter]
                    .into_iter()
                    .find(|r| pool.contains(r))
                    .unwrap_or(Role::Parameter);
                (name, role)
            })
            .collect()
    }

    /// Source-level names whose ranges were classified differently.
    pub fn conflicts(&self) -> Vec<String> {
        let mut seen: BTreeMap<&str, BTreeSet<Role>> = BTreeMap::new();
        for (name, role) in &self.roles {
            if !self.unused.contains(name) {
                seen.entry(base_name(name)).or_default().insert(*role);
            }
        }
        seen.into_iter().filter(|(_, r)| r.len() > 1).map(|(n, _)| n.to_string()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.by_source_name()).expect("string map serializes")
    }
}

/// Dependency graph: variable → variables it depends on directly.
pub type DependencyGraph = BTreeMap<String, BTreeSet<String>>;

fn expr_vars(e: &Expr, values: &mut BTreeSet<String>, subs: &mut BTreeSet<String>) {
    e.value_vars(values);
    e.subscript_vars(subs);
}

/// Classifies every renamed variable of `cfg` (which should be range-renamed).
pub fn classify(cfg: &Cfg) -> (RoleMap, DependencyGraph) {
    let mut all: BTreeSet<String> = BTreeSet::new();
    let mut index: BTreeSet<String> = BTreeSet::new();
    let mut inputs: BTreeSet<String> = BTreeSet::new();
    let mut read_vars: BTreeSet<String> = BTreeSet::new();
    let mut deps = DependencyGraph::new();

    for d in &cfg.program.decls {
        all.insert(d.name.clone());
    }
    // Step 1: subscripts and loop counters.
    for node in &cfg.nodes {
        let mut values = BTreeSet::new();
        let mut subs = BTreeSet::new();
        match &node.kind {
            NodeKind::Assign { lhs, rhs } => {
                all.insert(lhs.name.clone());
                expr_vars(rhs, &mut values, &mut subs);
                crate::frontend::ast::lvalue_subscript_vars(lhs, &mut subs);
            }
            NodeKind::Read { lhs, .. } => {
                all.insert(lhs.name.clone());
                inputs.insert(lhs.name.clone());
                crate::frontend::ast::lvalue_subscript_vars(lhs, &mut subs);
            }
            NodeKind::Write { value } => expr_vars(value, &mut values, &mut subs),
            NodeKind::Assume { cond } => {
                expr_vars(&cond.lhs, &mut values, &mut subs);
                expr_vars(&cond.rhs, &mut values, &mut subs);
            }
            NodeKind::ForInit { index: i, .. } | NodeKind::ForTest { index: i, .. } | NodeKind::ForIncr { index: i } => {
                subs.insert(i.clone());
            }
            NodeKind::Entry | NodeKind::Exit => {}
        }
        read_vars.extend(values.iter().cloned());
        read_vars.extend(subs.iter().cloned());
        all.extend(values);
        all.extend(subs.iter().cloned());
        index.extend(subs);
    }

    // Step 3a: assignment dependencies, with Index variables removed (step 2).
    for node in &cfg.nodes {
        if let NodeKind::Assign { lhs, rhs } = &node.kind {
            if index.contains(&lhs.name) {
                continue;
            }
            let mut values = BTreeSet::new();
            rhs.value_vars(&mut values);
            let e = deps.entry(lhs.name.clone()).or_default();
            e.extend(values.into_iter().filter(|v| !index.contains(v)));
        }
    }
    // Step 3b: definitions dominated by an assumption depend on its variables.
    let dom = dominators(cfg);
    for a in &cfg.nodes {
        let NodeKind::Assume { cond } = &a.kind else { continue };
        let mut cvars = BTreeSet::new();
        cond.lhs.value_vars(&mut cvars);
        cond.rhs.value_vars(&mut cvars);
        cvars.retain(|v| !index.contains(v));
        for n in &cfg.nodes {
            let dominated = dom[n.id.0].as_ref().is_some_and(|d| d.contains(&a.id));
            if !dominated {
                continue;
            }
            if let Some(v) = n.def() {
                if !index.contains(v) {
                    deps.entry(v.to_string()).or_default().extend(cvars.iter().cloned());
                }
            }
        }
    }
    let closure = transitive_closure(&deps);

    let mut roles = BTreeMap::new();
    for v in &all {
        let role = if index.contains(v) {
            Role::Index
        } else if inputs.contains(v) || closure.get(v).is_some_and(|d| d.contains(v)) {
            Role::State
        } else {
            Role::Parameter
        };
        roles.insert(v.clone(), role);
    }
    // Anything that depends on a state variable is itself state.
    let states: BTreeSet<String> = roles.iter().filter(|(_, r)| **r == Role::State).map(|(v, _)| v.clone()).collect();
    for (v, ds) in &closure {
        if roles.get(v) == Some(&Role::Parameter) && ds.iter().any(|d| states.contains(d)) {
            roles.insert(v.clone(), Role::State);
        }
    }
    let unused = all.iter().filter(|v| !read_vars.contains(*v)).cloned().collect();
    (RoleMap { roles, unused }, deps)
}

pub fn transitive_closure(deps: &DependencyGraph) -> DependencyGraph {
    let mut out = DependencyGraph::new();
    for v in deps.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&String> = deps[v].iter().collect();
        while let Some(x) = stack.pop() {
            if seen.insert(x.clone()) {
                if let Some(next) = deps.get(x) {
                    stack.extend(next.iter());
                }
            }
        }
        out.insert(v.clone(), seen);
    }
    out
}

/// Parameters must not depend on state.
pub fn check_parameters(roles: &RoleMap, deps: &DependencyGraph) -> Result<(), (String, String)> {
    let closure = transitive_closure(deps);
    for (v, ds) in &closure {
        if roles.get(v) == Some(Role::Parameter) {
            if let Some(s) = ds.iter().find(|d| roles.get(d) == Some(Role::State)) {
                return Err((v.clone(), s.clone()));
            }
        }
    }
    Ok(())
}

/// Everything the role pass computes for one program.
#[derive(Debug, Clone)]
pub struct RoleAnalysis {
    pub liveness: LivenessInfo,
    pub ranges: Vec<PersistenceRange>,
    pub renamed: Cfg,
    pub roles: RoleMap,
    pub dependencies: DependencyGraph,
}

/// Runs liveness, range renaming and classification on a pre-unroll CFG.
pub fn analyze_roles(cfg: &Cfg) -> RoleAnalysis {
    let liveness = compute_liveness(cfg);
    let ranges = persistence_ranges(&liveness, cfg);
    let (renamed, _) = rename_by_range(cfg, &ranges);
    let (roles, dependencies) = classify(&renamed);
    RoleAnalysis { liveness, ranges, renamed, roles, dependencies }
}
