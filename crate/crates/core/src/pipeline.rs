//! Source text to compiled loop summary.

use std::collections::BTreeMap;

use crate::frontend::{self, build_cfg, parse, unroll_loops, Cfg, FrontendError, SourceProgram, Span};
use crate::roles::{analyze_roles, Role, RoleAnalysis};
use crate::semantics::{compile_loop, LoopSummary, SemanticsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

impl PipelineError {
    pub fn span(&self) -> Span {
        match self {
            PipelineError::Frontend(e) => e.span,
            PipelineError::Semantics(e) => e.span,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            PipelineError::Frontend(e) => &e.message,
            PipelineError::Semantics(e) => &e.message,
        }
    }
}

/// Output of every stage up to rule compilation.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub program: SourceProgram,
    pub cfg: Cfg,
    pub roles: RoleAnalysis,
    /// Source-level roles after collapsing persistence ranges.
    pub source_roles: BTreeMap<String, Role>,
    pub unrolled: Cfg,
    pub summary: LoopSummary,
    /// Variables whose ranges received different roles.
    pub conflicts: Vec<String>,
}

/// Parses and classifies `src` without compiling rules.
pub fn roles_only(src: &str) -> Result<(SourceProgram, RoleAnalysis), FrontendError> {
    let program = parse(src)?;
    let cfg = build_cfg(&program);
    if cfg.loop_head.is_none() {
        return Err(FrontendError::new(frontend::ErrorKind::MissingLoop, Span::default(), "program has no `while(1)` loop"));
    }
    let roles = analyze_roles(&cfg);
    Ok((program, roles))
}

/// Runs parse, role classification, unrolling and rule compilation.
pub fn analyze_source(src: &str, inputs: &BTreeMap<u32, f64>) -> Result<Analysis, PipelineError> {
    let program = parse(src)?;
    let cfg = build_cfg(&program);
    let roles = analyze_roles(&cfg);
    let source_roles = roles.roles.by_source_name();
    let conflicts = roles.roles.conflicts();
    let unrolled = unroll_loops(&cfg)?;
    let summary = compile_loop(&unrolled, &source_roles, inputs)?;
    Ok(Analysis { program, cfg, roles, source_roles, unrolled, summary, conflicts })
}
