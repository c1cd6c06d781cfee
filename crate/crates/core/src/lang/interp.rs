//! Tree-walking interpreter with runtime safety checks.
//!
//! Every check failure (bounds, overflow, division by zero, negative
//! allocation, call depth) stops execution with a [`CrashSignature`]. The
//! interpreter is generic over a tag domain so the same engine can run with
//! no tags ([`run`]) or propagate taint tags ([`run_tagged`]).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::program::{Builtin, Program, Res};
use crate::analysis::SinkKind;
use crate::digest::digest64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_steps: u64,
    pub max_call_depth: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_steps: 1_000_000,
            max_call_depth: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    Crash,
    InputExhausted,
    StepLimit,
    ExplicitAbort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CrashKind {
    OobRead,
    OobWrite,
    Overflow,
    DivZero,
    AllocNeg,
    CallDepth,
}

impl CrashKind {
    pub fn name(self) -> &'static str {
        match self {
            CrashKind::OobRead => "OOB_READ",
            CrashKind::OobWrite => "OOB_WRITE",
            CrashKind::Overflow => "OVERFLOW",
            CrashKind::DivZero => "DIV_ZERO",
            CrashKind::AllocNeg => "ALLOC_NEG",
            CrashKind::CallDepth => "CALL_DEPTH",
        }
    }
}

/// One entry of the call stack: the active function and the line in its
/// caller that invoked it (0 for the entry function).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StackFrame {
    pub function: String,
    pub call_line: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrashSignature {
    pub kind: CrashKind,
    pub function: String,
    pub file: String,
    pub line: u32,
    pub stack_digest: u64,
}

/// Digest of an ordered call stack.
pub fn stack_digest(stack: &[StackFrame]) -> u64 {
    let mut text = String::new();
    for frame in stack {
        text.push_str(&frame.function);
        text.push(':');
        text.push_str(&frame.call_line.to_string());
        text.push('\n');
    }
    digest64(text.as_bytes())
}

/// `(node, taken)`: a function entry (always `true`) or an `if`/`while`
/// decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchId {
    pub node: NodeId,
    pub taken: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: Status,
    pub outputs: Vec<String>,
    pub violation: Option<CrashSignature>,
    pub coverage: BTreeSet<BranchId>,
    pub steps_used: u64,
    /// Number of input values consumed.
    pub inputs_consumed: usize,
    /// Call stack at the crash point; empty unless `status == Crash`.
    pub crash_stack: Vec<StackFrame>,
}

impl ExecutionResult {
    pub fn crashed(&self) -> bool {
        self.status == Status::Crash
    }
}

/// Taint tag domain.
pub trait Tag: Clone + Default {
    fn source(node: NodeId) -> Self;
    fn join(&self, other: &Self) -> Self;
}

impl Tag for () {
    fn source(_: NodeId) -> Self {}
    fn join(&self, _: &Self) -> Self {}
}

/// Set of source nodes a value was derived from.
pub type TaintTags = BTreeSet<NodeId>;

impl Tag for TaintTags {
    fn source(node: NodeId) -> Self {
        BTreeSet::from([node])
    }

    fn join(&self, other: &Self) -> Self {
        if other.is_empty() {
            return self.clone();
        }
        if self.is_empty() {
            return other.clone();
        }
        self.union(other).copied().collect()
    }
}

/// A tagged value reaching a sink position during a tagged run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SinkObservation {
    pub kind: SinkKind,
    pub sink: NodeId,
    pub sources: TaintTags,
}

pub fn run(program: &Program, input: &[i64], limits: Limits) -> ExecutionResult {
    let mut machine: Machine<'_, ()> = Machine::new(program, input, limits);
    machine.execute()
}

/// Runs with taint tags: every value read from input carries the id of the
/// reading call, and tags propagate through all operators, assignments,
/// calls and buffer contents. Returns the result and every sink position that
/// received a tagged value.
pub fn run_tagged(
    program: &Program,
    input: &[i64],
    limits: Limits,
) -> (ExecutionResult, BTreeSet<SinkObservation>) {
    let mut machine: Machine<'_, TaintTags> = Machine::new(program, input, limits);
    machine.observe = true;
    let result = machine.execute();
    (result, machine.observations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Value {
    Int(i64),
    Buf(usize),
    Unit,
}

#[derive(Debug, Clone)]
struct Val<T> {
    v: Value,
    tag: T,
}

impl<T: Tag> Val<T> {
    fn int(v: i64, tag: T) -> Self {
        Val {
            v: Value::Int(v),
            tag,
        }
    }
}

const DENSE_LIMIT: i64 = 1 << 16;

/// Zero-filled buffer; storage past `DENSE_LIMIT` is sparse so that huge
/// allocations cost nothing until written.
#[derive(Debug, Clone)]
struct Buffer<T> {
    len: i64,
    dense: Vec<i64>,
    sparse: BTreeMap<i64, i64>,
    tag: T,
}

impl<T> Buffer<T> {
    fn get(&self, i: i64) -> i64 {
        if i < self.dense.len() as i64 {
            self.dense[i as usize]
        } else {
            self.sparse.get(&i).copied().unwrap_or(0)
        }
    }

    fn set(&mut self, i: i64, v: i64) {
        if i < self.dense.len() as i64 {
            self.dense[i as usize] = v;
        } else {
            self.sparse.insert(i, v);
        }
    }
}

enum Stop {
    Crash(CrashKind, NodeId),
    InputExhausted,
    StepLimit,
    Abort,
}

enum Flow<T> {
    Normal,
    Return(Val<T>),
}

struct Machine<'p, T> {
    program: &'p Program,
    input: &'p [i64],
    cursor: usize,
    limits: Limits,
    steps: u64,
    outputs: Vec<String>,
    coverage: BTreeSet<BranchId>,
    heap: Vec<Buffer<T>>,
    stack: Vec<StackFrame>,
    /// Function index of each active frame.
    frames: Vec<u32>,
    observe: bool,
    observations: BTreeSet<SinkObservation>,
}

type Exec<T> = Result<T, Stop>;

impl<'p, T: Tag + ObserveTag> Machine<'p, T> {
    fn new(program: &'p Program, input: &'p [i64], limits: Limits) -> Self {
        Machine {
            program,
            input,
            cursor: 0,
            limits,
            steps: 0,
            outputs: Vec::new(),
            coverage: BTreeSet::new(),
            heap: Vec::new(),
            stack: Vec::new(),
            frames: Vec::new(),
            observe: false,
            observations: BTreeSet::new(),
        }
    }

    fn execute(&mut self) -> ExecutionResult {
        let entry = self.program.entry;
        let outcome = self.call(entry, Vec::new(), 0);
        let (status, violation, crash_stack) = match outcome {
            Ok(_) => (Status::Ok, None, Vec::new()),
            Err(Stop::InputExhausted) => (Status::InputExhausted, None, Vec::new()),
            Err(Stop::StepLimit) => (Status::StepLimit, None, Vec::new()),
            Err(Stop::Abort) => (Status::ExplicitAbort, None, Vec::new()),
            Err(Stop::Crash(kind, node)) => {
                let func = *self.frames.last().expect("crash inside a frame");
                let sig = CrashSignature {
                    kind,
                    function: self.program.functions[func as usize].name.clone(),
                    file: self.program.function_file(func).to_string(),
                    line: self.line_of(node),
                    stack_digest: stack_digest(&self.stack),
                };
                (Status::Crash, Some(sig), self.stack.clone())
            }
        };
        ExecutionResult {
            status,
            outputs: std::mem::take(&mut self.outputs),
            violation,
            coverage: std::mem::take(&mut self.coverage),
            steps_used: self.steps,
            inputs_consumed: self.cursor,
            crash_stack,
        }
    }

    fn line_of(&self, node: NodeId) -> u32 {
        node_line(self.program, node)
    }

    fn tick(&mut self) -> Exec<()> {
        self.steps += 1;
        if self.steps > self.limits.max_steps {
            Err(Stop::StepLimit)
        } else {
            Ok(())
        }
    }

    fn call(&mut self, func: u32, args: Vec<Val<T>>, call_line: u32) -> Exec<Val<T>> {
        let info = &self.program.functions[func as usize];
        self.stack.push(StackFrame {
            function: info.name.clone(),
            call_line,
        });
        self.frames.push(func);
        self.tick()?;
        let f = self.program.function(func);
        self.coverage.insert(BranchId {
            node: f.id,
            taken: true,
        });
        let mut slots: Vec<Val<T>> = vec![
            Val {
                v: Value::Unit,
                tag: T::default()
            };
            info.slot_decls.len()
        ];
        for (i, a) in args.into_iter().enumerate() {
            slots[i] = a;
        }
        let flow = self.block(&f.body, &mut slots)?;
        let ret = match flow {
            Flow::Return(v) => v,
            Flow::Normal => match f.ret {
                Some(Type::Int) => Val::int(0, T::default()),
                Some(Type::Buf) => Val {
                    v: Value::Buf(self.new_buffer(0, Vec::new(), T::default())),
                    tag: T::default(),
                },
                None => Val {
                    v: Value::Unit,
                    tag: T::default(),
                },
            },
        };
        self.stack.pop();
        self.frames.pop();
        Ok(ret)
    }

    fn new_buffer(&mut self, len: i64, mut dense: Vec<i64>, tag: T) -> usize {
        dense.resize(len.min(DENSE_LIMIT) as usize, 0);
        self.heap.push(Buffer {
            len,
            dense,
            sparse: BTreeMap::new(),
            tag,
        });
        self.heap.len() - 1
    }

    fn block(&mut self, block: &'p Block, slots: &mut Vec<Val<T>>) -> Exec<Flow<T>> {
        for stmt in &block.stmts {
            if let Flow::Return(v) = self.stmt(stmt, slots)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn slot(&self, id: NodeId) -> usize {
        match self.program.res(id) {
            Res::Local(slot) => slot as usize,
            other => unreachable!("node {id} does not resolve to a local: {other:?}"),
        }
    }

    fn stmt(&mut self, stmt: &'p Stmt, slots: &mut Vec<Val<T>>) -> Exec<Flow<T>> {
        self.tick()?;
        match &stmt.kind {
            StmtKind::Let { init, .. } => {
                let v = self.expr(init, slots)?;
                slots[self.slot(stmt.id)] = v;
            }
            StmtKind::Assign { value, .. } => {
                let v = self.expr(value, slots)?;
                slots[self.slot(stmt.id)] = v;
            }
            StmtKind::IndexAssign { index, value, .. } => {
                let buf = self.buffer_of(&slots[self.slot(stmt.id)]);
                let i = self.expr(index, slots)?;
                let v = self.expr(value, slots)?;
                let idx = as_int(&i);
                self.observe_sink(SinkKind::Index, stmt.id, &i.tag);
                let b = &mut self.heap[buf];
                if idx < 0 || idx >= b.len {
                    return Err(Stop::Crash(CrashKind::OobWrite, stmt.id));
                }
                b.set(idx, as_int(&v));
                b.tag = b.tag.join(&v.tag);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let c = as_int(&self.expr(cond, slots)?) != 0;
                self.coverage.insert(BranchId {
                    node: stmt.id,
                    taken: c,
                });
                if c {
                    return self.block(then_block, slots);
                } else if let Some(b) = else_block {
                    return self.block(b, slots);
                }
            }
            StmtKind::While { cond, body } => loop {
                let c = as_int(&self.expr(cond, slots)?) != 0;
                self.coverage.insert(BranchId {
                    node: stmt.id,
                    taken: c,
                });
                if !c {
                    break;
                }
                if let Flow::Return(v) = self.block(body, slots)? {
                    return Ok(Flow::Return(v));
                }
                self.tick()?;
            },
            StmtKind::Return(value) => {
                let v = match value {
                    Some(e) => self.expr(e, slots)?,
                    None => Val {
                        v: Value::Unit,
                        tag: T::default(),
                    },
                };
                return Ok(Flow::Return(v));
            }
            StmtKind::Expr(e) => {
                self.expr(e, slots)?;
            }
        }
        Ok(Flow::Normal)
    }

    fn buffer_of(&self, v: &Val<T>) -> usize {
        match v.v {
            Value::Buf(b) => b,
            other => unreachable!("type checker admitted non-buffer {other:?}"),
        }
    }

    fn observe_sink(&mut self, kind: SinkKind, node: NodeId, tag: &T) {
        if self.observe {
            if let Some(sources) = tag.as_tags() {
                if !sources.is_empty() {
                    self.observations.insert(SinkObservation {
                        kind,
                        sink: node,
                        sources: sources.clone(),
                    });
                }
            }
        }
    }

    fn expr(&mut self, expr: &'p Expr, slots: &mut Vec<Val<T>>) -> Exec<Val<T>> {
        match &expr.kind {
            ExprKind::Int(v) => Ok(Val::int(*v, T::default())),
            ExprKind::Var(_) => match self.program.res(expr.id) {
                Res::Local(slot) => Ok(slots[slot as usize].clone()),
                Res::Const(v) => Ok(Val::int(v, T::default())),
                other => unreachable!("variable resolves to {other:?}"),
            },
            ExprKind::Index { index, .. } => {
                let buf = self.buffer_of(&slots[self.slot(expr.id)]);
                let i = self.expr(index, slots)?;
                let idx = as_int(&i);
                self.observe_sink(SinkKind::Index, expr.id, &i.tag);
                let b = &self.heap[buf];
                if idx < 0 || idx >= b.len {
                    return Err(Stop::Crash(CrashKind::OobRead, expr.id));
                }
                Ok(Val::int(b.get(idx), b.tag.clone()))
            }
            ExprKind::Call { args, .. } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.expr(a, slots)?);
                }
                match self.program.res(expr.id) {
                    Res::Builtin(b) => self.builtin(b, expr, vals),
                    Res::Func(f) => {
                        if self.frames.len() as u32 >= self.limits.max_call_depth {
                            return Err(Stop::Crash(CrashKind::CallDepth, expr.id));
                        }
                        let line = self.line_of(expr.id);
                        self.call(f, vals, line)
                    }
                    other => unreachable!("call resolves to {other:?}"),
                }
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let l = self.expr(lhs, slots)?;
                match op {
                    BinOp::And | BinOp::Or => {
                        let lv = as_int(&l) != 0;
                        if (*op == BinOp::And && !lv) || (*op == BinOp::Or && lv) {
                            return Ok(Val::int(lv as i64, l.tag));
                        }
                        let r = self.expr(rhs, slots)?;
                        let rv = as_int(&r) != 0;
                        return Ok(Val::int(rv as i64, l.tag.join(&r.tag)));
                    }
                    _ => {}
                }
                let r = self.expr(rhs, slots)?;
                let (a, b) = (as_int(&l), as_int(&r));
                let tag = l.tag.join(&r.tag);
                if matches!(op, BinOp::Div | BinOp::Rem) {
                    self.observe_sink(SinkKind::DivDenom, expr.id, &r.tag);
                }
                let overflow = Stop::Crash(CrashKind::Overflow, expr.id);
                let v = match op {
                    BinOp::Add => a.checked_add(b).ok_or(overflow)?,
                    BinOp::Sub => a.checked_sub(b).ok_or(overflow)?,
                    BinOp::Mul => a.checked_mul(b).ok_or(overflow)?,
                    BinOp::Div | BinOp::Rem => {
                        if b == 0 {
                            return Err(Stop::Crash(CrashKind::DivZero, expr.id));
                        }
                        // Truncated division: the remainder takes the sign of
                        // the dividend.
                        if *op == BinOp::Div {
                            a.checked_div(b).ok_or(overflow)?
                        } else {
                            a.checked_rem(b).ok_or(overflow)?
                        }
                    }
                    BinOp::Eq => (a == b) as i64,
                    BinOp::Ne => (a != b) as i64,
                    BinOp::Lt => (a < b) as i64,
                    BinOp::Le => (a <= b) as i64,
                    BinOp::Gt => (a > b) as i64,
                    BinOp::Ge => (a >= b) as i64,
                    BinOp::And | BinOp::Or => unreachable!(),
                };
                Ok(Val::int(v, tag))
            }
            ExprKind::Unary { op, operand } => {
                let v = self.expr(operand, slots)?;
                let x = as_int(&v);
                let r = match op {
                    UnOp::Neg => x
                        .checked_neg()
                        .ok_or(Stop::Crash(CrashKind::Overflow, expr.id))?,
                    UnOp::Not => (x == 0) as i64,
                };
                Ok(Val::int(r, v.tag))
            }
        }
    }

    fn read(&mut self) -> Exec<i64> {
        match self.input.get(self.cursor) {
            Some(&v) => {
                self.cursor += 1;
                Ok(v)
            }
            None => Err(Stop::InputExhausted),
        }
    }

    fn builtin(&mut self, b: Builtin, expr: &Expr, args: Vec<Val<T>>) -> Exec<Val<T>> {
        let unit = Val {
            v: Value::Unit,
            tag: T::default(),
        };
        match b {
            Builtin::ReadInt => {
                let v = self.read()?;
                Ok(Val::int(v, T::source(expr.id)))
            }
            Builtin::ReadBuf | Builtin::Alloc => {
                let n = as_int(&args[0]);
                self.observe_sink(SinkKind::AllocSize, expr.id, &args[0].tag);
                if n < 0 {
                    return Err(Stop::Crash(CrashKind::AllocNeg, expr.id));
                }
                let (data, tag) = if b == Builtin::ReadBuf {
                    let remaining = (self.input.len() - self.cursor) as i64;
                    if n > remaining {
                        self.cursor = self.input.len();
                        return Err(Stop::InputExhausted);
                    }
                    let data = self.input[self.cursor..self.cursor + n as usize].to_vec();
                    self.cursor += n as usize;
                    (data, T::source(expr.id))
                } else {
                    (Vec::new(), T::default())
                };
                let id = self.new_buffer(n, data, tag);
                Ok(Val {
                    v: Value::Buf(id),
                    tag: T::default(),
                })
            }
            Builtin::Len => {
                let buf = self.buffer_of(&args[0]);
                let b = &self.heap[buf];
                Ok(Val::int(b.len, b.tag.clone()))
            }
            Builtin::Print => {
                self.outputs.push(as_int(&args[0]).to_string());
                Ok(unit)
            }
            Builtin::Abort => Err(Stop::Abort),
        }
    }
}

/// Access to the concrete tag set, for sink observation.
pub trait ObserveTag {
    fn as_tags(&self) -> Option<&TaintTags>;
}

impl ObserveTag for () {
    fn as_tags(&self) -> Option<&TaintTags> {
        None
    }
}

impl ObserveTag for TaintTags {
    fn as_tags(&self) -> Option<&TaintTags> {
        Some(self)
    }
}

fn as_int<T>(v: &Val<T>) -> i64 {
    match v.v {
        Value::Int(i) => i,
        other => unreachable!("type checker admitted non-int {other:?}"),
    }
}

/// Start line of any statement or expression node in the program.
pub fn node_line(program: &Program, node: NodeId) -> u32 {
    node_span(program, node).map_or(0, |s| s.start_line)
}

pub fn node_span(program: &Program, node: NodeId) -> Option<Span> {
    program.span(node)
}
