use super::lexer::Pos;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

/// Every function a program may call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    Abs,
    Min,
    Max,
    Sum,
    Mean,
    Std,
    Median,
    Quantile,
    Ptp,
    Clip,
    Tanh,
    Exp,
    Log,
    Log1p,
    Sqrt,
    Sign,
    Floor,
    Norm,
    Argsort,
    Argmin,
    Argmax,
    Sort,
    Len,
    Dot,
    Corr,
    Roll,
    Diff,
    Slice,
    Zeros,
    Append,
    Reverse,
    Rows,
    Cols,
    Float,
    Int,
}

impl Builtin {
    pub fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "abs" => Builtin::Abs,
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            "sum" => Builtin::Sum,
            "mean" => Builtin::Mean,
            "std" => Builtin::Std,
            "median" => Builtin::Median,
            "quantile" => Builtin::Quantile,
            "ptp" => Builtin::Ptp,
            "clip" => Builtin::Clip,
            "tanh" => Builtin::Tanh,
            "exp" => Builtin::Exp,
            "log" => Builtin::Log,
            "log1p" => Builtin::Log1p,
            "sqrt" => Builtin::Sqrt,
            "sign" => Builtin::Sign,
            "floor" => Builtin::Floor,
            "norm" => Builtin::Norm,
            "argsort" => Builtin::Argsort,
            "argmin" => Builtin::Argmin,
            "argmax" => Builtin::Argmax,
            "sort" => Builtin::Sort,
            "len" => Builtin::Len,
            "dot" => Builtin::Dot,
            "corr" => Builtin::Corr,
            "roll" => Builtin::Roll,
            "diff" => Builtin::Diff,
            "slice" => Builtin::Slice,
            "zeros" => Builtin::Zeros,
            "append" => Builtin::Append,
            "reverse" => Builtin::Reverse,
            "rows" => Builtin::Rows,
            "cols" => Builtin::Cols,
            "float" => Builtin::Float,
            "int" => Builtin::Int,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Abs => "abs",
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Sum => "sum",
            Builtin::Mean => "mean",
            Builtin::Std => "std",
            Builtin::Median => "median",
            Builtin::Quantile => "quantile",
            Builtin::Ptp => "ptp",
            Builtin::Clip => "clip",
            Builtin::Tanh => "tanh",
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Log1p => "log1p",
            Builtin::Sqrt => "sqrt",
            Builtin::Sign => "sign",
            Builtin::Floor => "floor",
            Builtin::Norm => "norm",
            Builtin::Argsort => "argsort",
            Builtin::Argmin => "argmin",
            Builtin::Argmax => "argmax",
            Builtin::Sort => "sort",
            Builtin::Len => "len",
            Builtin::Dot => "dot",
            Builtin::Corr => "corr",
            Builtin::Roll => "roll",
            Builtin::Diff => "diff",
            Builtin::Slice => "slice",
            Builtin::Zeros => "zeros",
            Builtin::Append => "append",
            Builtin::Reverse => "reverse",
            Builtin::Rows => "rows",
            Builtin::Cols => "cols",
            Builtin::Float => "float",
            Builtin::Int => "int",
        }
    }

    /// Inclusive arity bounds.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Builtin::Min | Builtin::Max => (1, 8),
            Builtin::Sum | Builtin::Mean | Builtin::Std | Builtin::Ptp | Builtin::Norm => (1, 2),
            Builtin::Quantile | Builtin::Dot | Builtin::Corr | Builtin::Roll | Builtin::Append => (2, 2),
            Builtin::Clip | Builtin::Slice => (3, 3),
            _ => (1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Num(f64),
    Bool(bool),
    Str(String),
    Var { name: String, slot: usize },
    Field(String),
    CtxGet { name: String, default: Box<Expr> },
    CtxHas(String),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Builtin, Vec<Expr>),
    Index(Box<Expr>, Box<Expr>),
    VectorLit(Vec<Expr>),
    RecordLit(Vec<(String, Expr)>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    Assign {
        slot: usize,
        value: Expr,
        pos: Pos,
    },
    IndexAssign {
        slot: usize,
        name: String,
        index: Expr,
        value: Expr,
        pos: Pos,
    },
    If {
        branches: Vec<(Expr, Vec<Stmt>)>,
        otherwise: Option<Vec<Stmt>>,
    },
    For {
        slot: usize,
        start: Option<Expr>,
        end: Expr,
        body: Vec<Stmt>,
        pos: Pos,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ast {
    pub body: Vec<Stmt>,
    pub total: Expr,
    pub components: Expr,
    /// Variable names by slot.
    pub slots: Vec<String>,
}
