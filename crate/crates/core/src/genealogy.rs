//! Dated genealogies and their heterochronous interval decomposition.
//!
//! Time runs backward from the most recent sample, which sits at time 0.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Relative tolerance under which a sampling time and a coalescent time are
/// considered tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Absolute tolerance (scaled by tree height when the height exceeds 1) for
/// tip ages implied by branch lengths versus supplied tip dates.
pub const DATE_TOLERANCE: f64 = 1e-8;

/// Distinct sampling times with the number of samples taken at each.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    times: Vec<f64>,
    counts: Vec<usize>,
}

impl SamplingSchedule {
    pub fn new(times: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if times.is_empty() || times.len() != counts.len() {
            return Err(Error::InvalidGenealogy(
                "sampling times and counts must be non-empty and of equal length".into(),
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGenealogy(
                "the most recent sampling time must be 0".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGenealogy(
                "sampling times must be finite and strictly increasing".into(),
            ));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidGenealogy("sample counts must be positive".into()));
        }
        let n: usize = counts.iter().sum();
        if n < 2 {
            return Err(Error::InvalidGenealogy("at least two samples are required".into()));
        }
        Ok(SamplingSchedule { times, counts })
    }

    /// All `n` samples taken at time 0.
    pub fn isochronous(n: usize) -> Result<Self> {
        Self::new(vec![0.0], vec![n])
    }

    /// Groups raw per-sample times (already shifted so the minimum is 0).
    pub fn from_sample_times(sample_times: &[f64]) -> Result<Self> {
        let mut sorted = sample_times.to_vec();
        if sorted.iter().any(|t| t.is_nan()) {
            return Err(Error::InvalidGenealogy("NaN sampling time".into()));
        }
        sorted.sort_by(f64::total_cmp);
        let mut times: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for t in sorted {
            match times.last() {
                Some(&last) if last == t => *counts.last_mut().unwrap() += 1,
                _ => {
                    times.push(t);
                    counts.push(1);
                }
            }
        }
        Self::new(times, counts)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total number of samples.
    pub fn sample_size(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Number of distinct sampling times.
    pub fn distinct_times(&self) -> usize {
        self.times.len()
    }

    /// Oldest sampling time.
    pub fn oldest(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Coalescent,
    Sampling,
}

/// A sampling schedule together with the `n - 1` coalescent times.
#[derive(Debug, Clone, PartialEq)]
pub struct Genealogy {
    schedule: SamplingSchedule,
    /// Ascending: `t_{n-1} < ... < t_1`.
    coal_times: Vec<f64>,
}

impl Genealogy {
    pub fn new(schedule: SamplingSchedule, mut coal_times: Vec<f64>) -> Result<Self> {
        let n = schedule.sample_size();
        if coal_times.len() != n - 1 {
            return Err(Error::InvalidGenealogy(format!(
                "expected {} coalescent times for {} samples, got {}",
                n - 1,
                n,
                coal_times.len()
            )));
        }
        if coal_times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidGenealogy(
                "coalescent times must be finite and positive".into(),
            ));
        }
        coal_times.sort_by(f64::total_cmp);
        if coal_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGenealogy("coalescent times must be distinct".into()));
        }
        let tmrca = *coal_times.last().unwrap();
        if tmrca <= schedule.oldest() {
            return Err(Error::InvalidGenealogy(
                "the oldest coalescent time must exceed every sampling time".into(),
            ));
        }
        for &t in &coal_times {
            for &s in schedule.times() {
                if (t - s).abs() <= TIE_TOLERANCE * t.abs().max(s.abs()) {
                    return Err(Error::InvalidGenealogy(format!(
                        "coalescent time {t} ties with sampling time {s}"
                    )));
                }
            }
        }
        let g = Genealogy {
            schedule,
            coal_times,
        };
        // Replaying the events checks the lineage-count invariant.
        let mut lineages = g.schedule.counts()[0];
        for (_, kind, added) in g.events() {
            match kind {
                EventKind::Sampling => lineages += added,
                EventKind::Coalescent => {
                    if lineages < 2 {
                        return Err(Error::InvalidGenealogy(
                            "coalescent event with fewer than two lineages".into(),
                        ));
                    }
                    lineages -= 1;
                }
            }
        }
        Ok(g)
    }

    pub fn schedule(&self) -> &SamplingSchedule {
        &self.schedule
    }

    /// Coalescent times in ascending order.
    pub fn coal_times(&self) -> &[f64] {
        &self.coal_times
    }

    pub fn sample_size(&self) -> usize {
        self.schedule.sample_size()
    }

    /// Time to the most recent common ancestor, `t_1`.
    pub fn tmrca(&self) -> f64 {
        *self.coal_times.last().unwrap()
    }

    /// Every event after time 0 in ascending time order, with the number of
    /// lineages added (sampling) or 0 (coalescent).
    fn events(&self) -> Vec<(f64, EventKind, usize)> {
        let mut events: Vec<(f64, EventKind, usize)> = self
            .schedule
            .times()
            .iter()
            .zip(self.schedule.counts())
            .skip(1)
            .map(|(&t, &c)| (t, EventKind::Sampling, c))
            .chain(self.coal_times.iter().map(|&t| (t, EventKind::Coalescent, 0)))
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        events
    }

    /// Multiplies every time by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::arg("scale factor must be positive"));
        }
        let times = self.schedule.times().iter().map(|t| t * factor).collect();
        let schedule = SamplingSchedule::new(times, self.schedule.counts().to_vec())?;
        Genealogy::new(schedule, self.coal_times.iter().map(|t| t * factor).collect())
    }

    /// Decomposes `(0, t_1]` into intervals of constant lineage count, ordered
    /// from the present into the past.
    pub fn lineage_intervals(&self) -> Result<LineageIntervals> {
        let mut intervals = Vec::with_capacity(self.coal_times.len() + self.schedule.distinct_times());
        let mut lineages = self.schedule.counts()[0];
        let mut start = 0.0;
        for (time, kind, added) in self.events() {
            intervals.push(LineageInterval {
                start,
                end: time,
                lineages,
                end_event: kind,
            });
            match kind {
                EventKind::Sampling => lineages += added,
                EventKind::Coalescent => {
                    if lineages < 2 {
                        return Err(Error::InvalidGenealogy(
                            "lineage count dropped below one".into(),
                        ));
                    }
                    lineages -= 1;
                }
            }
            start = time;
        }
        Ok(LineageIntervals { intervals })
    }
}

/// One interval `(start, end]` of constant lineage count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineageInterval {
    pub start: f64,
    pub end: f64,
    pub lineages: usize,
    pub end_event: EventKind,
}

impl LineageInterval {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    /// Number of lineage pairs, `n (n - 1) / 2`.
    pub fn coal_factor(&self) -> f64 {
        binomial2(self.lineages)
    }
}

pub fn binomial2(k: usize) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineageIntervals {
    pub intervals: Vec<LineageInterval>,
}

impl LineageIntervals {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LineageInterval> {
        self.intervals.iter()
    }
}

// ---------------------------------------------------------------------------
// Newick trees

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub label: Option<String>,
    pub branch_length: Option<f64>,
    pub children: Vec<usize>,
}

/// A rooted tree with branch lengths, as read from or written to Newick.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl Tree {
    pub fn new(nodes: Vec<TreeNode>, root: usize) -> Self {
        Tree { nodes, root }
    }

    pub fn parse(text: &str) -> Result<Self> {
        NewickParser::new(text).parse()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    fn is_tip(&self, idx: usize) -> bool {
        self.nodes[idx].children.is_empty()
    }

    fn check_bifurcating(&self) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.children.is_empty() && node.children.len() != 2 {
                return Err(Error::Newick {
                    position: 0,
                    message: format!(
                        "node {} has {} children; only bifurcating trees are supported",
                        node.label.as_deref().unwrap_or("<internal>"),
                        node.children.len()
                    ),
                });
            }
            if idx != self.root {
                match node.branch_length {
                    None => {
                        return Err(Error::Newick {
                            position: 0,
                            message: "every non-root branch needs a length".into(),
                        })
                    }
                    Some(b) if b < 0.0 || !b.is_finite() => {
                        return Err(Error::Newick {
                            position: 0,
                            message: format!("negative or non-finite branch length {b}"),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Node ages measured backward from the youngest tip.
    pub fn node_ages(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(idx) = stack.pop() {
            for &c in &self.nodes[idx].children {
                depth[c] = depth[idx] + self.nodes[c].branch_length.unwrap_or(0.0);
                stack.push(c);
            }
        }
        let max_depth = (0..self.nodes.len())
            .filter(|&i| self.is_tip(i))
            .map(|i| depth[i])
            .fold(f64::NEG_INFINITY, f64::max);
        depth.iter().map(|d| max_depth - d).collect()
    }

    /// Builds the genealogy from branch lengths, checking each tip age against
    /// `dates` (backward time; shifted so the youngest supplied date is 0).
    pub fn genealogy(&self, dates: &HashMap<String, f64>) -> Result<Genealogy> {
        self.check_bifurcating()?;
        let ages = self.node_ages();
        let tips: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.is_tip(i)).collect();
        let mut tip_dates = Vec::with_capacity(tips.len());
        for &tip in &tips {
            let label = self.nodes[tip].label.clone().unwrap_or_default();
            let date = *dates.get(&label).ok_or_else(|| Error::MissingDate(label.clone()))?;
            if !date.is_finite() {
                return Err(Error::InvalidGenealogy(format!("non-finite date for '{label}'")));
            }
            tip_dates.push((label, date));
        }
        let youngest = tip_dates.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        let height = ages[self.root];
        let tol = DATE_TOLERANCE * height.max(1.0);
        let mut sample_times = Vec::with_capacity(tips.len());
        for (&tip, (label, date)) in tips.iter().zip(&tip_dates) {
            let shifted = date - youngest;
            if (ages[tip] - shifted).abs() > tol {
                return Err(Error::InconsistentDate {
                    label: label.clone(),
                    tree_age: ages[tip],
                    date: shifted,
                });
            }
            sample_times.push(shifted);
        }
        let schedule = SamplingSchedule::from_sample_times(&sample_times)?;
        let coal_times = (0..self.nodes.len())
            .filter(|&i| !self.is_tip(i))
            .map(|i| ages[i])
            .collect();
        Genealogy::new(schedule, coal_times)
    }

    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_node(self.root, &mut out);
        out.push(';');
        out
    }

    fn write_node(&self, idx: usize, out: &mut String) {
        let node = &self.nodes[idx];
        if !node.children.is_empty() {
            out.push('(');
            for (i, &c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                self.write_node(c, out);
            }
            out.push(')');
        }
        if let Some(label) = &node.label {
            out.push_str(&quote_label(label));
        }
        if idx != self.root {
            if let Some(b) = node.branch_length {
                let _ = write!(out, ":{b}");
            }
        }
    }
}

fn quote_label(label: &str) -> String {
    if label
        .chars()
        .any(|c| c.is_whitespace() || "():,;[]'".contains(c))
    {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

/// Parses a single rooted Newick tree and converts it to a genealogy.
pub fn parse_newick(text: &str, dates: &HashMap<String, f64>) -> Result<Genealogy> {
    Tree::parse(text)?.genealogy(dates)
}

struct NewickParser<'a> {
    bytes: &'a [u8],
    text: &'a str,
    pos: usize,
    nodes: Vec<TreeNode>,
}

impl<'a> NewickParser<'a> {
    fn new(text: &'a str) -> Self {
        NewickParser {
            bytes: text.as_bytes(),
            text,
            pos: 0,
            nodes: Vec::new(),
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Newick {
            position: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            // [comments]
            if self.peek() == Some(b'[') {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b']' {
                    self.pos += 1;
                }
                self.pos = (self.pos + 1).min(self.bytes.len());
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Tree> {
        self.skip_ws();
        let root = self.subtree()?;
        self.skip_ws();
        if self.peek() != Some(b';') {
            return self.err("expected ';' at end of tree");
        }
        self.pos += 1;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return self.err("trailing characters after ';'");
        }
        Ok(Tree {
            nodes: self.nodes,
            root,
        })
    }

    fn subtree(&mut self) -> Result<usize> {
        self.skip_ws();
        let mut children = Vec::new();
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                children.push(self.subtree()?);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return self.err("expected ',' or ')'"),
                }
            }
        }
        self.skip_ws();
        let label = self.label()?;
        if children.is_empty() && label.is_none() {
            return self.err("tip without a label");
        }
        self.skip_ws();
        let branch_length = if self.peek() == Some(b':') {
            self.pos += 1;
            self.skip_ws();
            Some(self.number()?)
        } else {
            None
        };
        if let Some(b) = branch_length {
            if b < 0.0 {
                return self.err(format!("negative branch length {b}"));
            }
        }
        self.nodes.push(TreeNode {
            label,
            branch_length,
            children,
        });
        Ok(self.nodes.len() - 1)
    }

    fn label(&mut self) -> Result<Option<String>> {
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut label = String::new();
            loop {
                match self.peek() {
                    None => return self.err("unterminated quoted label"),
                    Some(b'\'') => {
                        if self.bytes.get(self.pos + 1) == Some(&b'\'') {
                            label.push('\'');
                            self.pos += 2;
                        } else {
                            self.pos += 1;
                            break;
                        }
                    }
                    Some(_) => {
                        let ch = self.text[self.pos..].chars().next().unwrap();
                        label.push(ch);
                        self.pos += ch.len_utf8();
                    }
                }
            }
            return Ok(Some(label));
        }
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() || b"():,;[]'".contains(&b) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(self.text[start..self.pos].to_string()))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let token = &self.text[start..self.pos];
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => {
                self.pos = start;
                self.err(format!("invalid branch length '{token}'"))
            }
        }
    }
}
