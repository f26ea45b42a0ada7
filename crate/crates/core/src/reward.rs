//! Repair problems over a tiny prefix-notation arithmetic language.
//!
//! A patch is a token sequence `<s> tok* </s>` whose body is an expression
//! in prefix notation: binary operators `+ - * / min max`, input variables
//! `x0..x3` and small integer constants `0..3`. Every operator has arity two,
//! so whether a token sequence is a well-formed program can be decided
//! token by token.
//!
//! A test case supplies the four inputs and an expected output. The reward of
//! a patch is the fraction of test cases it passes; parse errors, division by
//! zero and overflow fail the affected cases.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{TokenId, Vocab};

pub const NUM_INPUTS: usize = 4;
pub const SOS: &str = "<s>";
pub const END: &str = "</s>";

const OPS: [(&str, Op); 6] = [
    ("+", Op::Add),
    ("-", Op::Sub),
    ("*", Op::Mul),
    ("/", Op::Div),
    ("min", Op::Min),
    ("max", Op::Max),
];
const VARS: [&str; NUM_INPUTS] = ["x0", "x1", "x2", "x3"];
const CONSTS: [&str; 4] = ["0", "1", "2", "3"];

/// The vocabulary of the patch language: `<s>`, `</s>`, operators,
/// variables, constants (16 tokens, in that order).
pub fn repair_vocab() -> Vocab {
    let mut surfaces = vec![SOS, END];
    surfaces.extend(OPS.iter().map(|o| o.0));
    surfaces.extend(VARS);
    surfaces.extend(CONSTS);
    Vocab::from_surfaces(&surfaces, &[END], SOS).expect("static vocabulary is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

impl Op {
    fn apply(self, a: i64, b: i64) -> Result<i64, EvalError> {
        let r = match self {
            Op::Add => a.checked_add(b),
            Op::Sub => a.checked_sub(b),
            Op::Mul => a.checked_mul(b),
            Op::Div if b == 0 => return Err(EvalError::DivisionByZero),
            Op::Div => a.checked_div(b),
            Op::Min => Some(a.min(b)),
            Op::Max => Some(a.max(b)),
        };
        r.ok_or(EvalError::Overflow)
    }

    fn surface(self) -> &'static str {
        OPS.iter().find(|o| o.1 == self).expect("every op listed").0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Program {
    Var(usize),
    Const(i64),
    Bin(Op, Box<Program>, Box<Program>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("expected {NUM_INPUTS} inputs")]
    Arity,
}

impl Program {
    pub fn eval(&self, inputs: &[i64]) -> Result<i64, EvalError> {
        if inputs.len() != NUM_INPUTS {
            return Err(EvalError::Arity);
        }
        self.eval_unchecked(inputs)
    }

    fn eval_unchecked(&self, inputs: &[i64]) -> Result<i64, EvalError> {
        match self {
            Program::Var(i) => Ok(inputs[*i]),
            Program::Const(c) => Ok(*c),
            Program::Bin(op, a, b) => {
                op.apply(a.eval_unchecked(inputs)?, b.eval_unchecked(inputs)?)
            }
        }
    }

    /// Surface tokens in prefix order, without `<s>` / `</s>`.
    pub fn surfaces(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_surfaces(&mut out);
        out
    }

    fn push_surfaces(&self, out: &mut Vec<String>) {
        match self {
            Program::Var(i) => out.push(VARS[*i].to_string()),
            Program::Const(c) => out.push(c.to_string()),
            Program::Bin(op, a, b) => {
                out.push(op.surface().to_string());
                a.push_surfaces(out);
                b.push_surfaces(out);
            }
        }
    }

    /// Full patch token ids: `<s> body </s>`.
    pub fn to_tokens(&self, vocab: &Vocab) -> Vec<TokenId> {
        let mut ids = vec![vocab.sos()];
        ids.extend(
            self.surfaces()
                .iter()
                .map(|s| vocab.id(s).expect("program surface in vocabulary")),
        );
        ids.push(vocab.id(END).expect("end token"));
        ids
    }

    pub fn size(&self) -> usize {
        match self {
            Program::Bin(_, a, b) => 1 + a.size() + b.size(),
            _ => 1,
        }
    }
}

impl std::fmt::Display for Program {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.surfaces().join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("patch is incomplete (no terminal token)")]
    Incomplete,
    #[error("empty program")]
    Empty,
    #[error("unexpected end of program, operator needs more operands")]
    MissingOperand,
    #[error("{0} trailing token(s) after a complete expression")]
    Trailing(usize),
    #[error("token {0} is not part of the expression grammar")]
    BadToken(TokenId),
}

#[derive(Debug, Clone, Copy)]
enum Sym {
    Op(Op),
    Leaf(LeafKind),
}

#[derive(Debug, Clone, Copy)]
enum LeafKind {
    Var(usize),
    Const(i64),
}

fn classify(vocab: &Vocab, id: TokenId) -> Option<Sym> {
    let s = vocab.surface(id)?;
    if let Some(op) = OPS.iter().find(|o| o.0 == s) {
        return Some(Sym::Op(op.1));
    }
    if let Some(i) = VARS.iter().position(|v| *v == s) {
        return Some(Sym::Leaf(LeafKind::Var(i)));
    }
    CONSTS
        .contains(&s)
        .then(|| Sym::Leaf(LeafKind::Const(s.parse().expect("numeric constant"))))
}

/// Parses a complete patch. The leading `<s>` is optional; the sequence must
/// end with a terminal token.
pub fn decode_program(vocab: &Vocab, tokens: &[TokenId]) -> Result<Program, ParseError> {
    let body = match tokens.split_last() {
        Some((&last, body)) if vocab.is_terminal(last) => body,
        _ => return Err(ParseError::Incomplete),
    };
    let body = body.strip_prefix(&[vocab.sos()]).unwrap_or(body);
    if body.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut pos = 0;
    let program = parse_expr(vocab, body, &mut pos)?;
    if pos != body.len() {
        return Err(ParseError::Trailing(body.len() - pos));
    }
    Ok(program)
}

fn parse_expr(vocab: &Vocab, body: &[TokenId], pos: &mut usize) -> Result<Program, ParseError> {
    let &id = body.get(*pos).ok_or(ParseError::MissingOperand)?;
    *pos += 1;
    match classify(vocab, id).ok_or(ParseError::BadToken(id))? {
        Sym::Leaf(LeafKind::Var(i)) => Ok(Program::Var(i)),
        Sym::Leaf(LeafKind::Const(c)) => Ok(Program::Const(c)),
        Sym::Op(op) => {
            let a = parse_expr(vocab, body, pos)?;
            let b = parse_expr(vocab, body, pos)?;
            Ok(Program::Bin(op, Box::new(a), Box::new(b)))
        }
    }
}

/// Number of operands still needed after reading `body` (without `<s>`),
/// or `None` if the tokens already over-complete or leave the grammar.
pub fn open_slots(vocab: &Vocab, body: &[TokenId]) -> Option<usize> {
    let mut need = 1usize;
    for &id in body {
        if need == 0 {
            return None;
        }
        match classify(vocab, id)? {
            Sym::Op(_) => need += 1,
            Sym::Leaf(_) => need -= 1,
        }
    }
    Some(need)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub inputs: Vec<i64>,
    pub expected: i64,
}

/// A nonempty list of test cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Spec {
    cases: Vec<TestCase>,
}

impl Spec {
    pub fn new(cases: Vec<TestCase>) -> Option<Self> {
        (!cases.is_empty()).then_some(Self { cases })
    }

    pub fn cases(&self) -> &[TestCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub f_pass: usize,
    pub f_fail: usize,
    pub reward: f64,
    pub failures: Vec<usize>,
    /// Set when the patch could not be parsed at all.
    pub parse_error: Option<String>,
}

/// Runs `tokens` against every case of `spec`.
pub fn evaluate_reward(vocab: &Vocab, tokens: &[TokenId], spec: &Spec) -> RewardReport {
    let program = decode_program(vocab, tokens);
    let mut failures = Vec::new();
    for (i, case) in spec.cases().iter().enumerate() {
        let ok = match &program {
            Ok(p) => p.eval(&case.inputs) == Ok(case.expected),
            Err(_) => false,
        };
        if !ok {
            failures.push(i);
        }
    }
    let f_fail = failures.len();
    let f_pass = spec.len() - f_fail;
    RewardReport {
        f_pass,
        f_fail,
        reward: f_pass as f64 / (f_pass + f_fail) as f64,
        failures,
        parse_error: program.err().map(|e| e.to_string()),
    }
}

/// Something that scores complete patches.
pub trait RewardFn: Send + Sync {
    fn evaluate(&self, tokens: &[TokenId]) -> RewardReport;

    /// Number of times the underlying test runner has been invoked.
    fn invocations(&self) -> u64;
}

/// Runs a [`Spec`] through the interpreter, counting invocations.
#[derive(Debug)]
pub struct SpecRunner {
    vocab: Vocab,
    spec: Spec,
    runs: AtomicU64,
}

impl SpecRunner {
    pub fn new(vocab: Vocab, spec: Spec) -> Self {
        Self {
            vocab,
            spec,
            runs: AtomicU64::new(0),
        }
    }

    pub fn spec(&self) -> &Spec {
        &self.spec
    }
}

impl RewardFn for SpecRunner {
    fn evaluate(&self, tokens: &[TokenId]) -> RewardReport {
        self.runs.fetch_add(1, Ordering::Relaxed);
        evaluate_reward(&self.vocab, tokens, &self.spec)
    }

    fn invocations(&self) -> u64 {
        self.runs.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bug {
    pub id: String,
    pub buggy_tokens: Vec<TokenId>,
    /// The search prefix; always just `<s>`, the bug conditions the model instead.
    pub prompt_tokens: Vec<TokenId>,
    pub expected_depth: usize,
}

/// One corpus entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BugInstance {
    pub bug: Bug,
    pub spec: Spec,
    pub ground_truth: Vec<TokenId>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no valid mutation found for bug {0} after {1} attempts")]
    GenerationExhausted(usize, usize),
    #[error("n_bugs must be at least 1")]
    Empty,
    #[error("corpus io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Knobs for [`generate_bug_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Operators in a sampled ground-truth program, inclusive range.
    pub min_ops: usize,
    pub max_ops: usize,
    pub cases: usize,
    /// Inputs are drawn uniformly from this inclusive range.
    pub input_range: (i64, i64),
    pub max_attempts: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            min_ops: 1,
            max_ops: 2,
            cases: 6,
            input_range: (-5, 9),
            max_attempts: 1000,
        }
    }
}

pub fn sample_program(rng: &mut impl Rng, ops: usize) -> Program {
    if ops == 0 {
        return if rng.random_bool(0.6) {
            Program::Var(rng.random_range(0..NUM_INPUTS))
        } else {
            Program::Const(rng.random_range(0..CONSTS.len() as i64))
        };
    }
    let left = rng.random_range(0..ops);
    let op = OPS[rng.random_range(0..OPS.len())].1;
    Program::Bin(
        op,
        Box::new(sample_program(rng, left)),
        Box::new(sample_program(rng, ops - 1 - left)),
    )
}

fn uses_input(p: &Program) -> bool {
    match p {
        Program::Var(_) => true,
        Program::Const(_) => false,
        Program::Bin(_, a, b) => uses_input(a) || uses_input(b),
    }
}

/// Generates `n_bugs` single-token-mutation bugs with their specs.
///
/// Each bug samples a ground-truth program, derives a spec by running it on
/// random inputs (discarding programs that fault or give a constant output on
/// them), and replaces one token with another of the same arity class. Mutants
/// that still pass every case are rejected.
pub fn generate_bug_corpus(
    seed: u64,
    n_bugs: usize,
    vocab: &Vocab,
) -> Result<Vec<BugInstance>, CorpusError> {
    generate_bug_corpus_with(seed, n_bugs, vocab, &CorpusConfig::default())
}

pub fn generate_bug_corpus_with(
    seed: u64,
    n_bugs: usize,
    vocab: &Vocab,
    config: &CorpusConfig,
) -> Result<Vec<BugInstance>, CorpusError> {
    if n_bugs == 0 {
        return Err(CorpusError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_bugs);
    for index in 0..n_bugs {
        out.push(generate_one(&mut rng, index, vocab, config)?);
    }
    Ok(out)
}

fn generate_one(
    rng: &mut ChaCha8Rng,
    index: usize,
    vocab: &Vocab,
    config: &CorpusConfig,
) -> Result<BugInstance, CorpusError> {
    for _ in 0..config.max_attempts {
        let ops = rng.random_range(config.min_ops..=config.max_ops);
        let truth = sample_program(rng, ops);
        if !uses_input(&truth) {
            continue;
        }
        let mut cases = Vec::with_capacity(config.cases);
        for _ in 0..config.cases {
            let inputs: Vec<i64> = (0..NUM_INPUTS)
                .map(|_| rng.random_range(config.input_range.0..=config.input_range.1))
                .collect();
            match truth.eval(&inputs) {
                Ok(expected) => cases.push(TestCase { inputs, expected }),
                Err(_) => break,
            }
        }
        if cases.len() < config.cases || cases.iter().all(|c| c.expected == cases[0].expected) {
            continue;
        }
        let spec = Spec::new(cases).expect("nonempty");
        let ground_truth = truth.to_tokens(vocab);
        debug_assert_eq!(evaluate_reward(vocab, &ground_truth, &spec).reward, 1.0);
        if let Some(buggy) = mutate(rng, vocab, &ground_truth, &spec, config.max_attempts) {
            let bug = Bug {
                id: format!("bug-{index:03}"),
                expected_depth: ground_truth.len() - 1,
                buggy_tokens: buggy,
                prompt_tokens: vec![vocab.sos()],
            };
            return Ok(BugInstance {
                bug,
                spec,
                ground_truth,
            });
        }
    }
    Err(CorpusError::GenerationExhausted(index, config.max_attempts))
}

fn mutate(
    rng: &mut impl Rng,
    vocab: &Vocab,
    truth: &[TokenId],
    spec: &Spec,
    attempts: usize,
) -> Option<Vec<TokenId>> {
    let body = 1..truth.len() - 1;
    for _ in 0..attempts {
        let pos = rng.random_range(body.clone());
        let same_class: Vec<TokenId> = vocab
            .emittable()
            .filter(|&t| t != truth[pos] && !vocab.is_terminal(t))
            .filter(|&t| {
                matches!(
                    (classify(vocab, t), classify(vocab, truth[pos])),
                    (Some(Sym::Op(_)), Some(Sym::Op(_))) | (Some(Sym::Leaf(_)), Some(Sym::Leaf(_)))
                )
            })
            .collect();
        let mut mutant = truth.to_vec();
        mutant[pos] = same_class[rng.random_range(0..same_class.len())];
        if evaluate_reward(vocab, &mutant, spec).reward < 1.0 {
            return Some(mutant);
        }
    }
    None
}

/// Every sequence obtained by replacing one body token of `tokens` with a
/// different token of the same arity class (operator for operator, leaf for
/// leaf). The `<s>` prefix and the terminal are kept.
pub fn single_token_variants(vocab: &Vocab, tokens: &[TokenId]) -> Vec<Vec<TokenId>> {
    let mut out = Vec::new();
    let start = usize::from(tokens.first() == Some(&vocab.sos()));
    let end = tokens.len() - usize::from(tokens.last().is_some_and(|&t| vocab.is_terminal(t)));
    for pos in start..end {
        let is_op = match classify(vocab, tokens[pos]) {
            Some(Sym::Op(_)) => true,
            Some(Sym::Leaf(_)) => false,
            None => continue,
        };
        for t in vocab.emittable() {
            if t == tokens[pos] {
                continue;
            }
            if matches!(
                (classify(vocab, t), is_op),
                (Some(Sym::Op(_)), true) | (Some(Sym::Leaf(_)), false)
            ) {
                let mut v = tokens.to_vec();
                v[pos] = t;
                out.push(v);
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    id: String,
    buggy_tokens: Vec<TokenId>,
    ground_truth: Vec<TokenId>,
    spec: Vec<TestCase>,
}

/// Writes the corpus as JSON lines.
pub fn write_corpus(out: &mut impl Write, corpus: &[BugInstance]) -> Result<(), CorpusError> {
    for inst in corpus {
        let line = CorpusLine {
            id: inst.bug.id.clone(),
            buggy_tokens: inst.bug.buggy_tokens.clone(),
            ground_truth: inst.ground_truth.clone(),
            spec: inst.spec.cases().to_vec(),
        };
        serde_json::to_writer(&mut *out, &line).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(input: impl BufRead, vocab: &Vocab) -> Result<Vec<BugInstance>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| CorpusError::Format { line: i + 1, msg };
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let spec = Spec::new(parsed.spec).ok_or_else(|| bad("empty spec".into()))?;
        let v = vocab.len() as TokenId;
        if parsed
            .buggy_tokens
            .iter()
            .chain(&parsed.ground_truth)
            .any(|&t| t >= v)
        {
            return Err(bad("token id outside vocabulary".into()));
        }
        out.push(BugInstance {
            bug: Bug {
                id: parsed.id,
                expected_depth: parsed.ground_truth.len().saturating_sub(1),
                buggy_tokens: parsed.buggy_tokens,
                prompt_tokens: vec![vocab.sos()],
            },
            spec,
            ground_truth: parsed.ground_truth,
        });
    }
    Ok(out)
}
