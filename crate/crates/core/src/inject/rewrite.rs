//! Turns edit intents into line edits on the original source text.

use std::collections::BTreeMap;

use super::catalog::disjuncts;
use super::{Edit, EditIntent, InjectionPlan, Patch};
use crate::harness::ProjectSnapshot;
use crate::lang::{BinOp, ExprKind, NodeId, Program, Span, StmtKind};

/// Byte-range replacement inside one file.
#[derive(Debug, Clone)]
struct Replace {
    start: usize,
    end: usize,
    text: String,
}

struct FileText<'a> {
    content: &'a str,
    line_starts: Vec<usize>,
}

impl<'a> FileText<'a> {
    fn new(content: &'a str) -> Self {
        let mut line_starts = vec![0];
        for (i, b) in content.bytes().enumerate() {
            if b == b'\n' && i + 1 < content.len() {
                line_starts.push(i + 1);
            }
        }
        FileText {
            content,
            line_starts,
        }
    }

    fn offset(&self, line: u32, col: u32) -> usize {
        self.line_starts[line as usize - 1] + col as usize - 1
    }

    fn line_start(&self, line: u32) -> usize {
        self.line_starts[line as usize - 1]
    }

    /// Offset just past the line's terminator.
    fn line_end(&self, line: u32) -> usize {
        self.line_starts
            .get(line as usize)
            .copied()
            .unwrap_or(self.content.len())
    }

    fn line_of(&self, offset: usize) -> u32 {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => i as u32 + 1,
            Err(i) => i as u32,
        }
    }

    fn span_text(&self, span: Span) -> &'a str {
        &self.content
            [self.offset(span.start_line, span.start_col)..self.offset(span.end_line, span.end_col)]
    }
}

fn span_of(program: &Program, id: NodeId) -> Result<Span, String> {
    program
        .span(id)
        .ok_or_else(|| format!("node {id} has no span"))
}

pub(super) fn implement(snapshot: &ProjectSnapshot, plan: &InjectionPlan) -> Result<Patch, String> {
    let program = snapshot.program().map_err(|e| e.to_string())?;
    let texts: Vec<FileText> = snapshot
        .files
        .iter()
        .map(|f| FileText::new(&f.content))
        .collect();
    let mut ops: BTreeMap<u32, Vec<Replace>> = BTreeMap::new();

    let mut removals: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for intent in &plan.target_edits {
        match intent {
            EditIntent::FlipStrictness { node } => {
                let expr = program.find_expr(*node).ok_or("guard not found")?;
                let ExprKind::Binary { op, lhs, rhs } = &expr.kind else {
                    return Err("guard is not a comparison".into());
                };
                let flipped = op.flip_strictness().ok_or("operator has no strictness")?;
                let (l, r) = (span_of(&program, lhs.id)?, span_of(&program, rhs.id)?);
                if l.end_line != r.start_line {
                    return Err("comparison spans lines".into());
                }
                let text = &texts[l.file_id as usize];
                let start = text.offset(l.end_line, l.end_col);
                let end = text.offset(r.start_line, r.start_col);
                let between = &text.content[start..end];
                if between.trim() != op.symbol() {
                    return Err(format!("unexpected text `{between}` around operator"));
                }
                let at = start + between.find(op.symbol()).expect("checked above");
                ops.entry(l.file_id).or_default().push(Replace {
                    start: at,
                    end: at + op.symbol().len(),
                    text: flipped.symbol().to_string(),
                });
            }
            EditIntent::RemoveGuard { node, statement } => {
                removals.entry(*statement).or_default().push(*node);
            }
            EditIntent::SwapVariable { node, replacement } => {
                let expr = program.find_expr(*node).ok_or("variable not found")?;
                if !matches!(expr.kind, ExprKind::Var(_)) {
                    return Err("swap target is not a variable".into());
                }
                let span = span_of(&program, *node)?;
                let text = &texts[span.file_id as usize];
                ops.entry(span.file_id).or_default().push(Replace {
                    start: text.offset(span.start_line, span.start_col),
                    end: text.offset(span.end_line, span.end_col),
                    text: replacement.clone(),
                });
            }
        }
    }

    for (stmt_id, atoms) in removals {
        let stmt = program
            .find_stmt(stmt_id)
            .ok_or("guard statement not found")?;
        let StmtKind::If {
            cond,
            else_block: None,
            ..
        } = &stmt.kind
        else {
            return Err("guard statement is not an `if` without `else`".into());
        };
        let parts = disjuncts(cond);
        if !atoms.iter().all(|a| parts.iter().any(|p| p.id == *a)) {
            return Err("guard is not a disjunct of its condition".into());
        }
        let keep: Vec<_> = parts.iter().filter(|p| !atoms.contains(&p.id)).collect();
        let span = span_of(&program, stmt_id)?;
        let text = &texts[span.file_id as usize];
        if keep.is_empty() {
            let before = &text.content
                [text.line_start(span.start_line)..text.offset(span.start_line, span.start_col)];
            let after_start = text.offset(span.end_line, span.end_col);
            let after = &text.content[after_start..text.line_end(span.end_line)];
            if !before.trim().is_empty() || !after.trim().is_empty() {
                return Err("guard statement shares its lines with other code".into());
            }
            ops.entry(span.file_id).or_default().push(Replace {
                start: text.line_start(span.start_line),
                end: text.line_end(span.end_line),
                text: String::new(),
            });
        } else {
            let mut new_cond = Vec::new();
            for p in keep {
                let s = span_of(&program, p.id)?;
                let t = text.span_text(s);
                new_cond.push(t.to_string());
            }
            let c = span_of(&program, cond.id)?;
            ops.entry(c.file_id).or_default().push(Replace {
                start: text.offset(c.start_line, c.start_col),
                end: text.offset(c.end_line, c.end_col),
                text: new_cond.join(&format!(" {} ", BinOp::Or.symbol())),
            });
        }
    }

    let mut edits = Vec::new();
    for (file_id, mut reps) in ops {
        let text = &texts[file_id as usize];
        reps.sort_by_key(|r| (r.start, r.end));
        for w in reps.windows(2) {
            if w[1].start < w[0].end {
                return Err("edits overlap".into());
            }
        }
        // Group replacements touching the same or adjacent-overlapping lines.
        let mut groups: Vec<(u32, u32, Vec<Replace>)> = Vec::new();
        for r in reps {
            let first = text.line_of(r.start);
            let last = text.line_of(r.end.max(r.start + 1) - 1);
            match groups.last_mut() {
                Some((_, l, v)) if first <= *l => {
                    *l = (*l).max(last);
                    v.push(r);
                }
                _ => groups.push((first, last, vec![r])),
            }
        }
        for (first, last, reps) in groups {
            let base = text.line_start(first);
            let original = &text.content[base..text.line_end(last)];
            let mut replacement = original.to_string();
            for r in reps.iter().rev() {
                replacement.replace_range(r.start - base..r.end - base, &r.text);
            }
            edits.push(Edit {
                file: snapshot.files[file_id as usize].path.clone(),
                start_line: first,
                original: original.to_string(),
                replacement,
            });
        }
    }
    if edits.is_empty() {
        return Err("plan produced no edits".into());
    }
    Patch::new(edits, &snapshot.manifest.files).map_err(|e| e.to_string())
}
