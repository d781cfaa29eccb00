use std::collections::BTreeSet;

use super::ast::*;
use super::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Elementary CFG statement. Compound assignments are desugared, so `rhs` is
/// the full right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Entry,
    Exit,
    Assign { lhs: LValue, rhs: Expr },
    Read { lhs: LValue, channel: u32 },
    Write { value: Expr },
    Assume { cond: Cond },
    ForInit { index: String, lo: i64 },
    ForTest { index: String, hi: i64 },
    ForIncr { index: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub succs: Vec<NodeId>,
    pub span: Span,
    pub stmt: Option<StmtId>,
    pub in_loop: bool,
}

impl Node {
    /// Variable whose value the node writes (base name), if any.
    pub fn def(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Assign { lhs, .. } | NodeKind::Read { lhs, .. } => Some(&lhs.name),
            NodeKind::ForInit { index, .. } | NodeKind::ForIncr { index } => Some(index),
            _ => None,
        }
    }

    /// Base names the node reads, with subscripted writes counting as a use
    /// of the array.
    pub fn uses(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        match &self.kind {
            NodeKind::Assign { lhs, rhs } => {
                rhs.value_vars(&mut out);
                rhs.subscript_vars(&mut out);
                lvalue_subscript_vars(lhs, &mut out);
                if !lhs.indices.is_empty() {
                    out.insert(lhs.name.clone());
                }
            }
            NodeKind::Read { lhs, .. } => {
                lvalue_subscript_vars(lhs, &mut out);
                if !lhs.indices.is_empty() {
                    out.insert(lhs.name.clone());
                }
            }
            NodeKind::Write { value } => {
                value.value_vars(&mut out);
                value.subscript_vars(&mut out);
            }
            NodeKind::Assume { cond } => {
                for e in [&cond.lhs, &cond.rhs] {
                    e.value_vars(&mut out);
                    e.subscript_vars(&mut out);
                }
            }
            NodeKind::ForTest { index, .. } | NodeKind::ForIncr { index } => {
                out.insert(index.clone());
            }
            NodeKind::Entry | NodeKind::Exit | NodeKind::ForInit { .. } => {}
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cfg {
    pub program: SourceProgram,
    pub nodes: Vec<Node>,
    pub entry: NodeId,
    pub exit: NodeId,
    /// First node of the top-level `while(1)` body.
    pub loop_head: Option<NodeId>,
    pub unrolled: bool,
}

impl Cfg {
    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn preds(&self) -> Vec<Vec<NodeId>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            for s in &n.succs {
                preds[s.0].push(n.id);
            }
        }
        preds
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.iter().flat_map(|n| n.succs.iter().map(move |s| (n.id, *s)))
    }

    /// Nodes of the loop body in execution order, starting at the loop head.
    /// Only meaningful for an unrolled CFG, where the body is a single chain.
    pub fn loop_body(&self) -> Vec<NodeId> {
        let Some(head) = self.loop_head else { return Vec::new() };
        let mut out = vec![head];
        let mut cur = head;
        loop {
            match self.node(cur).succs.as_slice() {
                [next] if *next != head && out.len() <= self.nodes.len() => {
                    out.push(*next);
                    cur = *next;
                }
                _ => return out,
            }
        }
    }

    /// Statements before the loop (anything other than entry on the path to the head).
    pub fn prefix_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| !n.in_loop && !matches!(n.kind, NodeKind::Entry | NodeKind::Exit))
            .map(|n| n.id)
            .collect()
    }
}

struct Builder {
    nodes: Vec<Node>,
    loop_head: Option<NodeId>,
}

impl Builder {
    fn add(&mut self, kind: NodeKind, span: Span, stmt: Option<StmtId>, in_loop: bool, preds: &[NodeId]) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { id, kind, succs: Vec::new(), span, stmt, in_loop });
        for p in preds {
            self.nodes[p.0].succs.push(id);
        }
        id
    }

    fn seq(&mut self, stmts: &[Stmt], mut preds: Vec<NodeId>, in_loop: bool) -> Vec<NodeId> {
        for s in stmts {
            let (span, id) = (s.span, Some(s.id));
            preds = match &s.kind {
                StmtKind::Assign { lhs, op, rhs } => {
                    let rhs = StmtKind::effective_rhs(lhs, *op, rhs);
                    vec![self.add(NodeKind::Assign { lhs: lhs.clone(), rhs }, span, id, in_loop, &preds)]
                }
                StmtKind::Read { lhs, channel } => {
                    vec![self.add(NodeKind::Read { lhs: lhs.clone(), channel: *channel }, span, id, in_loop, &preds)]
                }
                StmtKind::Write { value } => {
                    vec![self.add(NodeKind::Write { value: value.clone() }, span, id, in_loop, &preds)]
                }
                StmtKind::Assume { cond } => {
                    vec![self.add(NodeKind::Assume { cond: cond.clone() }, span, id, in_loop, &preds)]
                }
                StmtKind::For { index, lo, hi, body } => {
                    let init = self.add(NodeKind::ForInit { index: index.clone(), lo: *lo }, span, id, in_loop, &preds);
                    let test = self.add(NodeKind::ForTest { index: index.clone(), hi: *hi }, span, id, in_loop, &[init]);
                    let tails = self.seq(body, vec![test], in_loop);
                    let incr = self.add(NodeKind::ForIncr { index: index.clone() }, span, id, in_loop, &tails);
                    self.nodes[incr.0].succs.push(test);
                    vec![test]
                }
                StmtKind::WhileTrue { body } => {
                    let head = NodeId(self.nodes.len());
                    let tails = self.seq(body, preds, true);
                    for t in tails {
                        self.nodes[t.0].succs.push(head);
                    }
                    self.loop_head = Some(head);
                    Vec::new()
                }
            };
        }
        preds
    }
}

/// Builds the control-flow graph; node order follows source order.
pub fn build_cfg(prog: &SourceProgram) -> Cfg {
    let mut b = Builder { nodes: Vec::new(), loop_head: None };
    let entry = b.add(NodeKind::Entry, Span::default(), None, false, &[]);
    let tails = b.seq(&prog.body, vec![entry], false);
    let exit = b.add(NodeKind::Exit, Span::default(), None, false, &tails);
    let unrolled = !contains_for(&prog.body);
    Cfg { program: prog.clone(), nodes: b.nodes, entry, exit, loop_head: b.loop_head, unrolled }
}

fn contains_for(stmts: &[Stmt]) -> bool {
    stmts.iter().any(|s| match &s.kind {
        StmtKind::For { .. } => true,
        StmtKind::WhileTrue { body } => contains_for(body),
        _ => false,
    })
}
