use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::num::{NonZeroU64, NonZeroUsize};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ast::{Ast, BinOp, Builtin, Expr, ExprKind, Stmt, UnOp};
use super::error::RuntimeError;
use super::lexer::Pos;
use super::value::{Matrix, Value};
use crate::context::RewardContext;

/// Resource bounds for one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalLimits {
    max_steps: NonZeroU64,
    max_collection_len: NonZeroUsize,
}

impl EvalLimits {
    pub fn new(max_steps: NonZeroU64, max_collection_len: NonZeroUsize) -> Self {
        Self {
            max_steps,
            max_collection_len,
        }
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps.get()
    }

    pub fn max_collection_len(&self) -> usize {
        self.max_collection_len.get()
    }
}

impl Default for EvalLimits {
    fn default() -> Self {
        Self {
            max_steps: NonZeroU64::new(1_000_000).unwrap(),
            max_collection_len: NonZeroUsize::new(100_000).unwrap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardOutput {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

type R<T> = Result<T, RuntimeError>;

pub(crate) fn run(ast: &Ast, ctx: &RewardContext, limits: EvalLimits) -> R<RewardOutput> {
    let mut it = Interp {
        ctx,
        limits,
        steps: 0,
        slots: vec![None; ast.slots.len()],
    };
    it.block(&ast.body)?;
    let total = it.expr(&ast.total)?;
    let total = match &total {
        Value::Num(_) | Value::Bool(_) => total.as_f64().unwrap(),
        Value::Vector(v) if v.len() == 1 => v[0],
        other => {
            return Err(RuntimeError::type_mismatch(
                ast.total.pos,
                format!("the total reward must be a scalar, found a {}", other.kind_name()),
            ))
        }
    };
    let components = match it.expr(&ast.components)? {
        Value::Record(r) => (*r).clone(),
        other => {
            return Err(RuntimeError::type_mismatch(
                ast.components.pos,
                format!("reward components must be a record, found a {}", other.kind_name()),
            ))
        }
    };
    Ok(RewardOutput { total, components })
}

struct Interp<'a> {
    ctx: &'a RewardContext,
    limits: EvalLimits,
    steps: u64,
    slots: Vec<Option<Value>>,
}

enum Operand<'v> {
    S(f64),
    V(&'v [f64]),
    M(&'v Matrix),
}

fn pymod(x: f64, y: f64) -> f64 {
    let r = x % y;
    if r != 0.0 && ((r < 0.0) != (y < 0.0)) {
        r + y
    } else {
        r
    }
}

fn bool_num(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn op_name(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Pow => "**",
        BinOp::Mod => "%",
        BinOp::Eq => "==",
        BinOp::Ne => "!=",
        BinOp::Lt => "<",
        BinOp::Le => "<=",
        BinOp::Gt => ">",
        BinOp::Ge => ">=",
        BinOp::And => "and",
        BinOp::Or => "or",
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let s = sorted(v);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let s = sorted(v);
    let h = q * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (h - lo as f64)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let r = sab / (saa * sbb).sqrt();
    if r.is_finite() {
        r.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

fn fmin(a: f64, b: f64) -> f64 {
    if b < a {
        b
    } else {
        a
    }
}

fn fmax(a: f64, b: f64) -> f64 {
    if b > a {
        b
    } else {
        a
    }
}

impl<'a> Interp<'a> {
    fn tick(&mut self, n: usize) -> R<()> {
        self.steps = self.steps.saturating_add(n as u64 + 1);
        if self.steps > self.limits.max_steps() {
            return Err(RuntimeError::StepBudgetExceeded {
                limit: self.limits.max_steps(),
            });
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> R<()> {
        if len > self.limits.max_collection_len() {
            return Err(RuntimeError::CollectionTooLarge {
                len,
                limit: self.limits.max_collection_len(),
            });
        }
        Ok(())
    }

    fn finite(&self, v: Value, pos: Pos, what: &str) -> R<Value> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(RuntimeError::non_finite(pos, what))
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> R<()> {
        for s in stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt) -> R<()> {
        self.tick(0)?;
        match s {
            Stmt::Assign { slot, value, .. } => {
                let v = self.expr(value)?;
                self.slots[*slot] = Some(v);
            }
            Stmt::IndexAssign {
                slot,
                name,
                index,
                value,
                pos,
            } => {
                let idx = self.expr(index)?;
                let v = self.expr(value)?;
                let Some(x) = v.as_f64() else {
                    return Err(RuntimeError::type_mismatch(
                        *pos,
                        format!("element assignment needs a scalar, found a {}", v.kind_name()),
                    ));
                };
                let Some(mut target) = self.slots[*slot].take() else {
                    return Err(RuntimeError::UndefinedVariable {
                        name: name.clone(),
                        line: pos.line,
                        col: pos.col,
                    });
                };
                let result = match (&mut target, &idx) {
                    (Value::Vector(vec), _) => {
                        let len = vec.len();
                        match self.index_of(&idx, len, *pos) {
                            Ok(i) => {
                                Arc::make_mut(vec)[i] = x;
                                Ok(())
                            }
                            Err(e) => Err(e),
                        }
                    }
                    (Value::Record(rec), Value::Str(key)) => {
                        Arc::make_mut(rec).insert(key.to_string(), x);
                        Ok(())
                    }
                    (other, _) => Err(RuntimeError::type_mismatch(
                        *pos,
                        format!("cannot assign an element of a {} with a {} index", other.kind_name(), idx.kind_name()),
                    )),
                };
                self.slots[*slot] = Some(target);
                result?;
            }
            Stmt::If { branches, otherwise } => {
                for (cond, body) in branches {
                    let c = self.expr(cond)?;
                    if self.truthy(&c, cond.pos)? {
                        return self.block(body);
                    }
                }
                if let Some(body) = otherwise {
                    self.block(body)?;
                }
            }
            Stmt::For {
                slot,
                start,
                end,
                body,
                ..
            } => {
                let lo = match start {
                    Some(e) => self.int_arg(e)?,
                    None => 0,
                };
                let hi = self.int_arg(end)?;
                let mut i = lo;
                while i < hi {
                    self.tick(0)?;
                    self.slots[*slot] = Some(Value::Num(i as f64));
                    self.block(body)?;
                    i += 1;
                }
            }
        }
        Ok(())
    }

    fn int_arg(&mut self, e: &Expr) -> R<i64> {
        let v = self.expr(e)?;
        match v.as_f64() {
            Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => Ok(x as i64),
            _ => Err(RuntimeError::type_mismatch(e.pos, "expected an integer")),
        }
    }

    fn truthy(&self, v: &Value, pos: Pos) -> R<bool> {
        match v {
            Value::Num(x) => Ok(*x != 0.0),
            Value::Bool(b) => Ok(*b),
            other => Err(RuntimeError::type_mismatch(
                pos,
                format!("the truth value of a {} is ambiguous", other.kind_name()),
            )),
        }
    }

    fn index_of(&self, idx: &Value, len: usize, pos: Pos) -> R<usize> {
        let Some(x) = idx.as_f64().filter(|x| x.fract() == 0.0) else {
            return Err(RuntimeError::type_mismatch(pos, "indices must be integers"));
        };
        let i = x as i64;
        let j = if i < 0 { i + len as i64 } else { i };
        if j < 0 || j >= len as i64 {
            return Err(RuntimeError::IndexOutOfRange {
                index: i,
                len,
                line: pos.line,
                col: pos.col,
            });
        }
        Ok(j as usize)
    }

    fn expr(&mut self, e: &Expr) -> R<Value> {
        self.tick(0)?;
        let pos = e.pos;
        match &e.kind {
            ExprKind::Num(x) => Ok(Value::Num(*x)),
            ExprKind::Bool(b) => Ok(Value::Bool(*b)),
            ExprKind::Str(s) => Ok(Value::Str(s.as_str().into())),
            ExprKind::Var { name, slot } => {
                self.slots[*slot]
                    .clone()
                    .ok_or_else(|| RuntimeError::UndefinedVariable {
                        name: name.clone(),
                        line: pos.line,
                        col: pos.col,
                    })
            }
            ExprKind::Field(name) => match self.ctx.get(name) {
                Some(v) => {
                    self.check_len(v.size())?;
                    self.finite(v.clone(), pos, &format!("context field `{name}`"))
                }
                None => Err(RuntimeError::MissingContextKey(name.clone())),
            },
            ExprKind::CtxGet { name, default } => match self.ctx.get(name) {
                Some(v) => {
                    self.check_len(v.size())?;
                    self.finite(v.clone(), pos, &format!("context field `{name}`"))
                }
                None => self.expr(default),
            },
            ExprKind::CtxHas(name) => Ok(Value::Bool(self.ctx.get(name).is_some())),
            ExprKind::Unary(op, inner) => {
                let v = self.expr(inner)?;
                match op {
                    UnOp::Not => {
                        let t = self.truthy(&v, inner.pos)?;
                        Ok(Value::Bool(!t))
                    }
                    UnOp::Neg => self.map(v, pos, "negation", |x| -x),
                }
            }
            ExprKind::Binary(op, l, r) => self.binary(*op, l, r, pos),
            ExprKind::Call(b, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.expr(a)?);
                }
                let out = self.call(*b, vals, pos)?;
                self.finite(out, pos, b.name())
            }
            ExprKind::Index(base, idx) => {
                let b = self.expr(base)?;
                let i = self.expr(idx)?;
                match (&b, &i) {
                    (Value::Vector(v), _) => Ok(Value::Num(v[self.index_of(&i, v.len(), pos)?])),
                    (Value::Matrix(m), _) => {
                        let r = self.index_of(&i, m.rows(), pos)?;
                        self.tick(m.cols())?;
                        Ok(Value::from(m.row(r)))
                    }
                    (Value::Record(rec), Value::Str(key)) => rec
                        .get(&**key)
                        .map(|x| Value::Num(*x))
                        .ok_or_else(|| RuntimeError::MissingRecordKey(key.to_string())),
                    _ => Err(RuntimeError::type_mismatch(
                        pos,
                        format!("cannot index a {} with a {}", b.kind_name(), i.kind_name()),
                    )),
                }
            }
            ExprKind::VectorLit(items) => {
                let mut vals = Vec::with_capacity(items.len());
                for it in items {
                    vals.push(self.expr(it)?);
                }
                if !vals.is_empty() && vals.iter().all(|v| matches!(v, Value::Vector(_))) {
                    let rows: Vec<&[f64]> = vals.iter().map(|v| v.as_slice().unwrap()).collect();
                    let m = Matrix::from_rows(&rows)
                        .ok_or_else(|| RuntimeError::type_mismatch(pos, "matrix rows differ in length"))?;
                    self.check_len(m.data().len())?;
                    return Ok(Value::from(m));
                }
                let mut out = Vec::with_capacity(vals.len());
                for v in &vals {
                    out.push(v.as_f64().ok_or_else(|| {
                        RuntimeError::type_mismatch(pos, format!("vector elements must be scalars, found a {}", v.kind_name()))
                    })?);
                }
                self.check_len(out.len())?;
                Ok(Value::from(out))
            }
            ExprKind::RecordLit(entries) => {
                let mut rec = BTreeMap::new();
                for (k, ex) in entries {
                    let v = self.expr(ex)?;
                    let x = match &v {
                        Value::Vector(xs) if xs.len() == 1 => xs[0],
                        _ => v.as_f64().ok_or_else(|| {
                            RuntimeError::type_mismatch(ex.pos, format!("record values must be scalars, found a {}", v.kind_name()))
                        })?,
                    };
                    rec.insert(k.clone(), x);
                }
                Ok(Value::Record(Arc::new(rec)))
            }
        }
    }

    fn binary(&mut self, op: BinOp, l: &Expr, r: &Expr, pos: Pos) -> R<Value> {
        if matches!(op, BinOp::And | BinOp::Or) {
            let a = self.expr(l)?;
            let ta = self.truthy(&a, l.pos)?;
            if (op == BinOp::And && !ta) || (op == BinOp::Or && ta) {
                return Ok(Value::Bool(ta));
            }
            let b = self.expr(r)?;
            return Ok(Value::Bool(self.truthy(&b, r.pos)?));
        }
        let a = self.expr(l)?;
        let b = self.expr(r)?;
        if let (Value::Str(x), Value::Str(y)) = (&a, &b) {
            return match op {
                BinOp::Eq => Ok(Value::Bool(x == y)),
                BinOp::Ne => Ok(Value::Bool(x != y)),
                _ => Err(RuntimeError::type_mismatch(pos, "strings only support == and !=")),
            };
        }
        let cmp = |f: fn(f64, f64) -> bool| move |x: f64, y: f64| bool_num(f(x, y));
        let out = match op {
            BinOp::Add => self.broadcast(&a, &b, pos, |x, y| x + y)?,
            BinOp::Sub => self.broadcast(&a, &b, pos, |x, y| x - y)?,
            BinOp::Mul => self.broadcast(&a, &b, pos, |x, y| x * y)?,
            BinOp::Div => self.broadcast(&a, &b, pos, |x, y| x / y)?,
            BinOp::Pow => self.broadcast(&a, &b, pos, f64::powf)?,
            BinOp::Mod => self.broadcast(&a, &b, pos, pymod)?,
            BinOp::Eq => self.broadcast(&a, &b, pos, cmp(|x, y| x == y))?,
            BinOp::Ne => self.broadcast(&a, &b, pos, cmp(|x, y| x != y))?,
            BinOp::Lt => self.broadcast(&a, &b, pos, cmp(|x, y| x < y))?,
            BinOp::Le => self.broadcast(&a, &b, pos, cmp(|x, y| x <= y))?,
            BinOp::Gt => self.broadcast(&a, &b, pos, cmp(|x, y| x > y))?,
            BinOp::Ge => self.broadcast(&a, &b, pos, cmp(|x, y| x >= y))?,
            BinOp::And | BinOp::Or => unreachable!(),
        };
        let out = match (op, out) {
            (BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, Value::Num(x)) => Value::Bool(x != 0.0),
            (_, v) => v,
        };
        self.finite(out, pos, op_name(op))
    }

    fn operand<'v>(&self, v: &'v Value, pos: Pos) -> R<Operand<'v>> {
        match v {
            Value::Num(_) | Value::Bool(_) => Ok(Operand::S(v.as_f64().unwrap())),
            Value::Vector(x) => Ok(Operand::V(x)),
            Value::Matrix(m) => Ok(Operand::M(m)),
            other => Err(RuntimeError::type_mismatch(
                pos,
                format!("arithmetic is not defined on a {}", other.kind_name()),
            )),
        }
    }

    /// Elementwise application with scalar, vector and row broadcasting.
    fn broadcast(&mut self, a: &Value, b: &Value, pos: Pos, f: impl Fn(f64, f64) -> f64) -> R<Value> {
        use Operand::*;
        let oa = self.operand(a, pos)?;
        let ob = self.operand(b, pos)?;
        let mismatch = |what: String| Err(RuntimeError::type_mismatch(pos, what));
        Ok(match (oa, ob) {
            (S(x), S(y)) => Value::Num(f(x, y)),
            (S(x), V(ys)) => {
                self.tick(ys.len())?;
                Value::from(ys.iter().map(|y| f(x, *y)).collect::<Vec<_>>())
            }
            (V(xs), S(y)) => {
                self.tick(xs.len())?;
                Value::from(xs.iter().map(|x| f(*x, y)).collect::<Vec<_>>())
            }
            (V(xs), V(ys)) => {
                if xs.len() != ys.len() {
                    return mismatch(format!("vector lengths differ ({} vs {})", xs.len(), ys.len()));
                }
                self.tick(xs.len())?;
                Value::from(xs.iter().zip(ys).map(|(x, y)| f(*x, *y)).collect::<Vec<_>>())
            }
            (M(m), S(y)) => {
                self.tick(m.data().len())?;
                Value::from(Matrix::new(m.rows(), m.cols(), m.data().iter().map(|x| f(*x, y)).collect()))
            }
            (S(x), M(m)) => {
                self.tick(m.data().len())?;
                Value::from(Matrix::new(m.rows(), m.cols(), m.data().iter().map(|y| f(x, *y)).collect()))
            }
            (M(m), M(n)) => {
                if (m.rows(), m.cols()) != (n.rows(), n.cols()) {
                    return mismatch("matrix shapes differ".into());
                }
                self.tick(m.data().len())?;
                Value::from(Matrix::new(
                    m.rows(),
                    m.cols(),
                    m.data().iter().zip(n.data()).map(|(x, y)| f(*x, *y)).collect(),
                ))
            }
            (M(m), V(ys)) => {
                if ys.len() != m.cols() {
                    return mismatch(format!("cannot broadcast a length-{} vector over {} columns", ys.len(), m.cols()));
                }
                self.tick(m.data().len())?;
                let c = m.cols();
                Value::from(Matrix::new(
                    m.rows(),
                    c,
                    m.data().iter().enumerate().map(|(k, x)| f(*x, ys[k % c])).collect(),
                ))
            }
            (V(xs), M(m)) => {
                if xs.len() != m.cols() {
                    return mismatch(format!("cannot broadcast a length-{} vector over {} columns", xs.len(), m.cols()));
                }
                self.tick(m.data().len())?;
                let c = m.cols();
                Value::from(Matrix::new(
                    m.rows(),
                    c,
                    m.data().iter().enumerate().map(|(k, y)| f(xs[k % c], *y)).collect(),
                ))
            }
        })
    }

    fn map(&mut self, v: Value, pos: Pos, what: &str, f: impl Fn(f64) -> f64) -> R<Value> {
        let out = match &v {
            Value::Num(_) | Value::Bool(_) => Value::Num(f(v.as_f64().unwrap())),
            Value::Vector(xs) => {
                self.tick(xs.len())?;
                Value::from(xs.iter().map(|x| f(*x)).collect::<Vec<_>>())
            }
            Value::Matrix(m) => {
                self.tick(m.data().len())?;
                Value::from(Matrix::new(m.rows(), m.cols(), m.data().iter().map(|x| f(*x)).collect()))
            }
            other => {
                return Err(RuntimeError::type_mismatch(
                    pos,
                    format!("`{what}` is not defined on a {}", other.kind_name()),
                ))
            }
        };
        self.finite(out, pos, what)
    }

    fn scalar(&self, v: &Value, pos: Pos, what: &str) -> R<f64> {
        v.as_f64().ok_or_else(|| {
            RuntimeError::type_mismatch(pos, format!("{what} must be a scalar, found a {}", v.kind_name()))
        })
    }

    fn vector<'v>(&self, v: &'v Value, pos: Pos, what: &str) -> R<&'v [f64]> {
        v.as_slice().ok_or_else(|| {
            RuntimeError::type_mismatch(pos, format!("{what} must be a vector, found a {}", v.kind_name()))
        })
    }

    /// Flattened view of a scalar, vector or matrix.
    fn elements(&self, v: &Value, pos: Pos, what: &str) -> R<Vec<f64>> {
        match v {
            Value::Num(_) | Value::Bool(_) => Ok(vec![v.as_f64().unwrap()]),
            Value::Vector(xs) => Ok(xs.to_vec()),
            Value::Matrix(m) => Ok(m.data().to_vec()),
            other => Err(RuntimeError::type_mismatch(
                pos,
                format!("`{what}` is not defined on a {}", other.kind_name()),
            )),
        }
    }

    /// Full or per-axis reduction. `reduce` receives a non-empty slice unless
    /// `allow_empty` is set.
    fn reduce(&mut self, args: &[Value], pos: Pos, what: &str, allow_empty: bool, reduce: fn(&[f64]) -> f64) -> R<Value> {
        let empty = || RuntimeError::type_mismatch(pos, format!("`{what}` of an empty collection"));
        if args.len() == 2 {
            let axis = self.scalar(&args[1], pos, "the axis")?;
            if let Value::Matrix(m) = &args[0] {
                self.tick(m.data().len())?;
                let out: Vec<f64> = if axis == 0.0 {
                    if m.rows() == 0 && !allow_empty {
                        return Err(empty());
                    }
                    (0..m.cols()).map(|c| reduce(&m.column(c))).collect()
                } else if axis == 1.0 {
                    if m.cols() == 0 && !allow_empty {
                        return Err(empty());
                    }
                    (0..m.rows()).map(|r| reduce(m.row(r))).collect()
                } else {
                    return Err(RuntimeError::type_mismatch(pos, "the axis must be 0 or 1"));
                };
                return Ok(Value::from(out));
            }
            if axis != 0.0 {
                return Err(RuntimeError::type_mismatch(pos, "a vector only has axis 0"));
            }
        }
        let xs = self.elements(&args[0], pos, what)?;
        if xs.is_empty() && !allow_empty {
            return Err(empty());
        }
        self.tick(xs.len())?;
        Ok(Value::Num(reduce(&xs)))
    }

    fn min_max(&mut self, args: Vec<Value>, pos: Pos, is_max: bool) -> R<Value> {
        let name = if is_max { "max" } else { "min" };
        let pick: fn(f64, f64) -> f64 = if is_max { fmax } else { fmin };
        let fold: fn(&[f64]) -> f64 = if is_max {
            |xs| xs.iter().copied().fold(f64::NEG_INFINITY, fmax)
        } else {
            |xs| xs.iter().copied().fold(f64::INFINITY, fmin)
        };
        if args.len() == 1 || (args.len() == 2 && matches!(args[0], Value::Matrix(_)) && args[1].as_f64().is_some()) {
            return self.reduce(&args, pos, name, false, fold);
        }
        let mut it = args.into_iter();
        let mut acc = it.next().unwrap();
        for v in it {
            acc = self.broadcast(&acc, &v, pos, pick)?;
        }
        Ok(acc)
    }

    fn call(&mut self, b: Builtin, args: Vec<Value>, pos: Pos) -> R<Value> {
        let name = b.name();
        match b {
            Builtin::Abs => self.map(args.into_iter().next().unwrap(), pos, name, f64::abs),
            Builtin::Tanh => self.map(args.into_iter().next().unwrap(), pos, name, f64::tanh),
            Builtin::Exp => self.map(args.into_iter().next().unwrap(), pos, name, f64::exp),
            Builtin::Log => self.map(args.into_iter().next().unwrap(), pos, name, f64::ln),
            Builtin::Log1p => self.map(args.into_iter().next().unwrap(), pos, name, f64::ln_1p),
            Builtin::Sqrt => self.map(args.into_iter().next().unwrap(), pos, name, f64::sqrt),
            Builtin::Floor => self.map(args.into_iter().next().unwrap(), pos, name, f64::floor),
            Builtin::Sign => self.map(args.into_iter().next().unwrap(), pos, name, |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Builtin::Float => {
                let v = &args[0];
                match v {
                    Value::Vector(xs) if xs.len() == 1 => Ok(Value::Num(xs[0])),
                    _ => Ok(Value::Num(self.scalar(v, pos, "the argument of `float`")?)),
                }
            }
            Builtin::Int => {
                let x = match &args[0] {
                    Value::Vector(xs) if xs.len() == 1 => xs[0],
                    v => self.scalar(v, pos, "the argument of `int`")?,
                };
                Ok(Value::Num(x.trunc()))
            }
            Builtin::Min => self.min_max(args, pos, false),
            Builtin::Max => self.min_max(args, pos, true),
            Builtin::Sum => self.reduce(&args, pos, name, true, |xs| xs.iter().sum()),
            Builtin::Mean => self.reduce(&args, pos, name, false, mean),
            Builtin::Std => self.reduce(&args, pos, name, false, std),
            Builtin::Ptp => self.reduce(&args, pos, name, false, |xs| {
                let hi = xs.iter().copied().fold(f64::NEG_INFINITY, fmax);
                let lo = xs.iter().copied().fold(f64::INFINITY, fmin);
                hi - lo
            }),
            Builtin::Median => self.reduce(&args, pos, name, false, median),
            Builtin::Quantile => {
                let q = self.scalar(&args[1], pos, "the quantile level")?;
                if !(0.0..=1.0).contains(&q) {
                    return Err(RuntimeError::type_mismatch(pos, "the quantile level must lie in [0, 1]"));
                }
                let xs = self.elements(&args[0], pos, name)?;
                if xs.is_empty() {
                    return Err(RuntimeError::type_mismatch(pos, "`quantile` of an empty collection"));
                }
                self.tick(xs.len() * 4)?;
                Ok(Value::Num(quantile(&xs, q)))
            }
            Builtin::Clip => {
                let lo = self.broadcast(&args[0], &args[1], pos, fmax)?;
                self.broadcast(&lo, &args[2], pos, fmin)
            }
            Builtin::Norm => {
                self.reduce(&args, pos, name, true, |xs| xs.iter().map(|x| x * x).sum::<f64>().sqrt())
            }
            Builtin::Argsort => {
                let xs = self.vector(&args[0], pos, "the argument of `argsort`")?;
                self.tick(xs.len() * 4)?;
                let mut idx: Vec<usize> = (0..xs.len()).collect();
                idx.sort_by(|i, j| xs[*i].total_cmp(&xs[*j]));
                Ok(Value::from(idx.into_iter().map(|i| i as f64).collect::<Vec<_>>()))
            }
            Builtin::Argmin | Builtin::Argmax => {
                let xs = self.elements(&args[0], pos, name)?;
                if xs.is_empty() {
                    return Err(RuntimeError::type_mismatch(pos, format!("`{name}` of an empty collection")));
                }
                self.tick(xs.len())?;
                let want = if b == Builtin::Argmin { Ordering::Less } else { Ordering::Greater };
                let mut best = 0;
                for (i, x) in xs.iter().enumerate().skip(1) {
                    if x.partial_cmp(&xs[best]) == Some(want) {
                        best = i;
                    }
                }
                Ok(Value::Num(best as f64))
            }
            Builtin::Sort => {
                let xs = self.vector(&args[0], pos, "the argument of `sort`")?;
                self.tick(xs.len() * 4)?;
                Ok(Value::from(sorted(xs)))
            }
            Builtin::Reverse => {
                let xs = self.vector(&args[0], pos, "the argument of `reverse`")?;
                self.tick(xs.len())?;
                Ok(Value::from(xs.iter().rev().copied().collect::<Vec<_>>()))
            }
            Builtin::Len => Ok(Value::Num(match &args[0] {
                Value::Vector(xs) => xs.len(),
                Value::Matrix(m) => m.rows(),
                Value::Record(r) => r.len(),
                other => {
                    return Err(RuntimeError::type_mismatch(
                        pos,
                        format!("`len` is not defined on a {}", other.kind_name()),
                    ))
                }
            } as f64)),
            Builtin::Rows | Builtin::Cols => {
                let m = args[0].as_matrix().ok_or_else(|| {
                    RuntimeError::type_mismatch(pos, format!("`{name}` needs a matrix, found a {}", args[0].kind_name()))
                })?;
                Ok(Value::Num(if b == Builtin::Rows { m.rows() } else { m.cols() } as f64))
            }
            Builtin::Dot => match (&args[0], &args[1]) {
                (Value::Matrix(m), Value::Vector(v)) => {
                    if m.cols() != v.len() {
                        return Err(RuntimeError::type_mismatch(pos, "`dot` shapes do not align"));
                    }
                    self.tick(m.data().len())?;
                    Ok(Value::from(
                        (0..m.rows())
                            .map(|r| m.row(r).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
                            .collect::<Vec<f64>>(),
                    ))
                }
                (a, c) => {
                    let xs = self.vector(a, pos, "the first argument of `dot`")?;
                    let ys = self.vector(c, pos, "the second argument of `dot`")?;
                    if xs.len() != ys.len() {
                        return Err(RuntimeError::type_mismatch(pos, "`dot` needs vectors of equal length"));
                    }
                    self.tick(xs.len())?;
                    Ok(Value::Num(xs.iter().zip(ys).map(|(a, b)| a * b).sum()))
                }
            },
            Builtin::Corr => {
                let xs = self.vector(&args[0], pos, "the first argument of `corr`")?;
                let ys = self.vector(&args[1], pos, "the second argument of `corr`")?;
                if xs.len() != ys.len() {
                    return Err(RuntimeError::type_mismatch(pos, "`corr` needs vectors of equal length"));
                }
                self.tick(xs.len() * 3)?;
                Ok(Value::Num(pearson(xs, ys)))
            }
            Builtin::Roll => {
                let xs = self.vector(&args[0], pos, "the first argument of `roll`")?;
                let k = self.scalar(&args[1], pos, "the shift")?;
                if k.fract() != 0.0 {
                    return Err(RuntimeError::type_mismatch(pos, "the shift must be an integer"));
                }
                self.tick(xs.len())?;
                let n = xs.len();
                if n == 0 {
                    return Ok(Value::from(Vec::new()));
                }
                let k = pymod(k, n as f64) as usize;
                Ok(Value::from((0..n).map(|i| xs[(i + n - k) % n]).collect::<Vec<_>>()))
            }
            Builtin::Diff => {
                let xs = self.vector(&args[0], pos, "the argument of `diff`")?;
                self.tick(xs.len())?;
                Ok(Value::from(xs.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()))
            }
            Builtin::Slice => {
                let xs = self.vector(&args[0], pos, "the first argument of `slice`")?;
                let n = xs.len() as i64;
                let bound = |v: &Value, what: &str| -> R<i64> {
                    let x = self.scalar(v, pos, what)?;
                    if x.fract() != 0.0 {
                        return Err(RuntimeError::type_mismatch(pos, "slice bounds must be integers"));
                    }
                    let i = x.clamp(-1e15, 1e15) as i64;
                    Ok(if i < 0 { (i + n).max(0) } else { i.min(n) })
                };
                let lo = bound(&args[1], "the slice start")? as usize;
                let hi = bound(&args[2], "the slice end")? as usize;
                let out = if lo < hi { xs[lo..hi].to_vec() } else { Vec::new() };
                self.tick(out.len())?;
                Ok(Value::from(out))
            }
            Builtin::Zeros => {
                let x = self.scalar(&args[0], pos, "the length")?;
                if x.fract() != 0.0 || x < 0.0 {
                    return Err(RuntimeError::type_mismatch(pos, "`zeros` needs a non-negative integer"));
                }
                if x > self.limits.max_collection_len() as f64 {
                    return Err(RuntimeError::CollectionTooLarge {
                        len: x.min(usize::MAX as f64) as usize,
                        limit: self.limits.max_collection_len(),
                    });
                }
                let n = x as usize;
                self.tick(n)?;
                Ok(Value::from(vec![0.0; n]))
            }
            Builtin::Append => {
                let mut xs = self.vector(&args[0], pos, "the first argument of `append`")?.to_vec();
                match &args[1] {
                    Value::Vector(ys) => xs.extend_from_slice(ys),
                    v => xs.push(self.scalar(v, pos, "the appended element")?),
                }
                self.check_len(xs.len())?;
                self.tick(xs.len())?;
                Ok(Value::from(xs))
            }
        }
    }
}
