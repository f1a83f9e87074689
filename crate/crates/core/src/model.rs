//! Binary target models.
//!
//! Built-in models load from JSON with a `"variant"` tag. `External` drives a
//! child process over a line-delimited JSON protocol: each request is one
//! line holding a JSON array of instances (arrays of numbers, categorical
//! values as level indices) and each response is one line holding a JSON
//! array of 0/1 integers of the same length.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::context::AugmentedPoint;
use crate::data::Instance;
use crate::error::{Error, Result};
use crate::factor::Atom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant")]
pub enum Model {
    /// 1 iff `weights . x + bias >= threshold`.
    LinearThreshold { weights: Vec<f64>, bias: f64, threshold: f64 },
    /// Nodes indexed from the root at 0.
    DecisionTree {
        nodes: Vec<TreeNode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arity: Option<usize>,
    },
    /// First matching rule wins.
    RuleModel {
        rules: Vec<Rule>,
        default: u8,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arity: Option<usize>,
    },
    External(ExternalModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub when: Vec<Atom>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    /// Goes left when `x <= threshold`.
    Threshold(f64),
    /// Goes left when the level index is in the set.
    Levels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { label: u8 },
    Split { feature: usize, test: SplitTest, left: usize, right: usize },
}

impl Model {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Model = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn constant(label: u8) -> Self {
        Model::RuleModel {
            rules: vec![],
            default: label,
            arity: None,
        }
    }

    pub fn external<S: Into<String>>(command: impl IntoIterator<Item = S>) -> Self {
        Model::External(ExternalModel::new(command.into_iter().map(Into::into).collect()))
    }

    /// Number of features the model declares, when it declares one.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Model::LinearThreshold { weights, .. } => Some(weights.len()),
            Model::DecisionTree { arity, .. } | Model::RuleModel { arity, .. } => *arity,
            Model::External(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::LinearThreshold { weights, bias, threshold } => {
                if weights.iter().chain([bias, threshold]).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidModel("non-finite linear coefficient".into()));
                }
            }
            Model::DecisionTree { nodes, .. } => validate_tree(nodes)?,
            Model::RuleModel { rules, default, .. } => {
                if *default > 1 || rules.iter().any(|r| r.label > 1) {
                    return Err(Error::InvalidModel("rule labels must be 0 or 1".into()));
                }
            }
            Model::External(ext) => {
                if ext.command.is_empty() {
                    return Err(Error::InvalidModel("empty external command".into()));
                }
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &Instance) -> Result<u8> {
        match self {
            Model::External(ext) => Ok(ext.predict_batch(std::slice::from_ref(x))?[0]),
            _ => self.predict_builtin(x),
        }
    }

    /// Labels for every instance, order preserved; one failure fails the
    /// batch. External models answer the whole batch in one round trip.
    pub fn predict_batch(&self, xs: &[Instance]) -> Result<Vec<u8>> {
        match self {
            Model::External(ext) => {
                if xs.is_empty() {
                    return Ok(vec![]);
                }
                ext.predict_batch(xs)
            }
            _ => xs.iter().map(|x| self.predict_builtin(x)).collect(),
        }
    }

    /// Prediction on an augmented point ignores its auxiliaries.
    pub fn predict_augmented(&self, z: &AugmentedPoint) -> Result<u8> {
        self.predict(&z.instance)
    }

    fn check_arity(&self, x: &Instance) -> Result<()> {
        match self.arity() {
            Some(n) if n != x.len() => Err(Error::ArityMismatch {
                expected: n,
                got: x.len(),
            }),
            _ => Ok(()),
        }
    }

    fn predict_builtin(&self, x: &Instance) -> Result<u8> {
        self.check_arity(x)?;
        let value = |i: usize| {
            x.get(i).ok_or(Error::ArityMismatch {
                expected: i + 1,
                got: x.len(),
            })
        };
        match self {
            Model::LinearThreshold { weights, bias, threshold } => {
                let score: f64 = weights.iter().zip(x.values()).map(|(w, v)| w * v).sum::<f64>() + bias;
                Ok(u8::from(score >= *threshold))
            }
            Model::DecisionTree { nodes, .. } => {
                let mut at = 0;
                loop {
                    match &nodes[at] {
                        TreeNode::Leaf { label } => return Ok(*label),
                        TreeNode::Split { feature, test, left, right } => {
                            let v = value(*feature)?;
                            let go_left = match test {
                                SplitTest::Threshold(t) => v <= *t,
                                SplitTest::Levels(levels) => levels.iter().any(|&l| l as f64 == v),
                            };
                            at = if go_left { *left } else { *right };
                        }
                    }
                }
            }
            Model::RuleModel { rules, default, .. } => {
                for rule in rules {
                    let mut fires = true;
                    for a in &rule.when {
                        value(a.feature)?;
                        fires &= a.holds(x).unwrap_or(false);
                    }
                    if fires {
                        return Ok(rule.label);
                    }
                }
                Ok(*default)
            }
            Model::External(_) => unreachable!("handled by predict"),
        }
    }
}

fn validate_tree(nodes: &[TreeNode]) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::InvalidModel("decision tree has no nodes".into()));
    }
    // every non-root node has exactly one parent and is reachable from the root
    let mut parents = vec![0usize; nodes.len()];
    for node in nodes {
        match node {
            TreeNode::Leaf { label } if *label > 1 => {
                return Err(Error::InvalidModel("leaf labels must be 0 or 1".into()));
            }
            TreeNode::Leaf { .. } => {}
            TreeNode::Split { left, right, .. } => {
                for &c in [left, right] {
                    if c >= nodes.len() || c == 0 {
                        return Err(Error::InvalidModel(format!("child index {c} is invalid")));
                    }
                    parents[c] += 1;
                }
            }
        }
    }
    if parents[1..].iter().any(|&p| p != 1) {
        return Err(Error::InvalidModel("tree nodes must each have exactly one parent".into()));
    }
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![0];
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidModel("tree contains a cycle".into()));
        }
        if let TreeNode::Split { left, right, .. } = &nodes[i] {
            stack.push(*left);
            stack.push(*right);
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidModel("tree has unreachable nodes".into()));
    }
    Ok(())
}

struct ChildIo {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl Drop for ChildIo {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A model answered by a child process. The process is spawned on first use
/// and requests are serialized through a mutex.
#[derive(Serialize, Deserialize)]
#[serde(from = "ExternalSpec", into = "ExternalSpec")]
pub struct ExternalModel {
    command: Vec<String>,
    io: Mutex<Option<ChildIo>>,
}

#[derive(Serialize, Deserialize)]
struct ExternalSpec {
    command: Vec<String>,
}

impl From<ExternalSpec> for ExternalModel {
    fn from(s: ExternalSpec) -> Self {
        ExternalModel::new(s.command)
    }
}

impl From<ExternalModel> for ExternalSpec {
    fn from(m: ExternalModel) -> Self {
        ExternalSpec { command: m.command.clone() }
    }
}

impl Clone for ExternalModel {
    fn clone(&self) -> Self {
        ExternalModel::new(self.command.clone())
    }
}

impl PartialEq for ExternalModel {
    fn eq(&self, other: &Self) -> bool {
        self.command == other.command
    }
}

impl fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalModel").field("command", &self.command).finish()
    }
}

impl ExternalModel {
    pub fn new(command: Vec<String>) -> Self {
        ExternalModel {
            command,
            io: Mutex::new(None),
        }
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn spawn(&self) -> Result<ChildIo> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| Error::ExternalModelFailure("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ExternalModelFailure(format!("cannot spawn `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(ChildIo { child, stdin, stdout })
    }

    pub fn predict_batch(&self, xs: &[Instance]) -> Result<Vec<u8>> {
        let mut guard = self.io.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let io = guard.as_mut().expect("spawned above");
        let result = round_trip(io, xs);
        if result.is_err() {
            // a broken child is not reused
            *guard = None;
        }
        result
    }
}

fn round_trip(io: &mut ChildIo, xs: &[Instance]) -> Result<Vec<u8>> {
    let fail = |msg: String| Error::ExternalModelFailure(msg);
    let mut line = serde_json::to_string(xs)?;
    line.push('\n');
    io.stdin
        .write_all(line.as_bytes())
        .and_then(|_| io.stdin.flush())
        .map_err(|e| fail(format!("write to child failed: {e}")))?;
    let mut reply = String::new();
    let n = io
        .stdout
        .read_line(&mut reply)
        .map_err(|e| fail(format!("read from child failed: {e}")))?;
    if n == 0 {
        let status = io.child.wait().ok().map(|s| s.to_string()).unwrap_or_default();
        return Err(fail(format!("child closed its output ({status})")));
    }
    let labels: Vec<u8> =
        serde_json::from_str(reply.trim_end()).map_err(|e| fail(format!("malformed reply `{}`: {e}", reply.trim_end())))?;
    if labels.len() != xs.len() {
        return Err(fail(format!("{} labels for {} instances", labels.len(), xs.len())));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(fail("labels must be 0 or 1".into()));
    }
    Ok(labels)
}
