//! METEOR with unigram alignment and a fragmentation penalty.
//!
//! Tokens are lowercased and split on whitespace. The alignment maximizes
//! the number of matched unigrams and, among maximum matchings, minimizes
//! the number of chunks (runs that are contiguous in both strings). Ties are
//! broken towards the leftmost reference positions in candidate order.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeteorOptions {
    /// Adds a second alignment stage over suffix-stripped stems.
    pub use_stemming: bool,
    /// Recall weight in `Fmean = (w + 1)PR / (R + wP)`.
    pub fmean_recall_weight: f64,
    pub penalty_gamma: f64,
    pub penalty_beta: f64,
}

impl Default for MeteorOptions {
    fn default() -> Self {
        Self {
            use_stemming: false,
            fmean_recall_weight: 9.0,
            penalty_gamma: 0.5,
            penalty_beta: 3.0,
        }
    }
}

/// Intermediate quantities of one METEOR evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub candidate_len: usize,
    pub reference_len: usize,
    /// `alignment[i]` is the reference position matched to candidate token `i`.
    pub alignment: Vec<Option<usize>>,
    pub score: f64,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Minimal English suffix stripper.
pub fn stem(word: &str) -> &str {
    for suffix in ["ingly", "edly", "ing", "ed", "es", "ly", "s"] {
        if let Some(s) = word.strip_suffix(suffix) {
            if s.chars().count() >= 3 {
                return s;
            }
        }
    }
    word
}

pub fn meteor(candidate: &str, reference: &str, opts: &MeteorOptions) -> f64 {
    meteor_detail(candidate, reference, opts).score
}

pub fn meteor_detail(candidate: &str, reference: &str, opts: &MeteorOptions) -> MeteorDetail {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    let mut alignment = align(&cand, &refs, &vec![None; cand.len()], |a, b| a == b);
    if opts.use_stemming {
        let used: Vec<bool> = {
            let mut u = vec![false; refs.len()];
            alignment.iter().flatten().for_each(|&j| u[j] = true);
            u
        };
        let cand_stems: Vec<&str> = cand.iter().map(|w| stem(w)).collect();
        let ref_stems: Vec<&str> = refs.iter().map(|w| stem(w)).collect();
        // Stage two only pairs tokens left unmatched by the exact stage.
        let fixed = alignment.clone();
        alignment = align_indices(cand.len(), refs.len(), &fixed, |i, j| {
            fixed[i].is_none() && !used[j] && cand_stems[i] == ref_stems[j]
        });
    }
    score_alignment(alignment, cand.len(), refs.len(), opts)
}

fn score_alignment(
    alignment: Vec<Option<usize>>,
    candidate_len: usize,
    reference_len: usize,
    opts: &MeteorOptions,
) -> MeteorDetail {
    let matches = alignment.iter().flatten().count();
    let chunks = count_chunks(&alignment);
    let score = if matches == 0 {
        0.0
    } else {
        let m = matches as f64;
        let p = m / candidate_len as f64;
        let r = m / reference_len as f64;
        let w = opts.fmean_recall_weight;
        let fmean = (w + 1.0) * p * r / (r + w * p);
        let penalty = opts.penalty_gamma * libm::pow(chunks as f64 / m, opts.penalty_beta);
        fmean * (1.0 - penalty)
    };
    MeteorDetail { matches, chunks, candidate_len, reference_len, alignment, score }
}

/// Number of maximal runs of matches contiguous in both strings.
pub fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (*a, prev) {
            (Some(j), Some(p)) if j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *a;
    }
    chunks
}

fn align<F>(cand: &[String], refs: &[String], fixed: &[Option<usize>], eq: F) -> Vec<Option<usize>>
where
    F: Fn(&str, &str) -> bool,
{
    align_indices(cand.len(), refs.len(), fixed, |i, j| eq(&cand[i], &refs[j]))
}

/// Node budget for the exact search; past it the best alignment found so far is kept.
const SEARCH_BUDGET: usize = 500_000;

/// Maximum matching between candidate and reference positions under the
/// compatibility relation `compatible`, extending the matches in `fixed`,
/// with the fewest chunks.
fn align_indices<F>(n_cand: usize, n_ref: usize, fixed: &[Option<usize>], compatible: F) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> bool,
{
    let options: Vec<Vec<usize>> = (0..n_cand)
        .map(|i| {
            if fixed[i].is_some() {
                Vec::new()
            } else {
                (0..n_ref).filter(|&j| compatible(i, j)).collect()
            }
        })
        .collect();

    let mut used = vec![false; n_ref];
    fixed.iter().flatten().for_each(|&j| used[j] = true);

    // Target match count from a maximum bipartite matching.
    let target = fixed.iter().flatten().count() + max_matching(&options, &used);

    let candidates = |i: usize| -> &[usize] {
        match &fixed[i] {
            Some(j) => core::slice::from_ref(j),
            None => &options[i],
        }
    };
    // Upper bound on continuations achievable from position i onwards.
    let mut cont_possible = vec![0usize; n_cand + 1];
    for i in (0..n_cand).rev() {
        let can = i > 0 && candidates(i).iter().any(|&j| j > 0 && candidates(i - 1).contains(&(j - 1)));
        cont_possible[i] = cont_possible[i + 1] + usize::from(can);
    }
    let mut fixed_after = vec![0usize; n_cand + 1];
    for i in (0..n_cand).rev() {
        fixed_after[i] = fixed_after[i + 1] + usize::from(fixed[i].is_some());
    }

    let greedy = greedy_alignment(fixed, &options, &used);
    let mut search = Search {
        fixed,
        options: &options,
        cont_possible: &cont_possible,
        fixed_after: &fixed_after,
        target,
        best: greedy.clone(),
        // One above the greedy count so the search itself finds the
        // first alignment in search order that ties the greedy one.
        best_chunks: if greedy.iter().flatten().count() == target {
            count_chunks(&greedy) + 1
        } else {
            usize::MAX
        },
        current: fixed.to_vec(),
        used,
        nodes: 0,
        remaining_capacity: remaining_options(&options),
    };
    search.dfs(0, 0, 0);
    search.best
}

fn remaining_options(options: &[Vec<usize>]) -> Vec<usize> {
    let mut rem = vec![0usize; options.len() + 1];
    for i in (0..options.len()).rev() {
        rem[i] = rem[i + 1] + usize::from(!options[i].is_empty());
    }
    rem
}

fn greedy_alignment(fixed: &[Option<usize>], options: &[Vec<usize>], used: &[bool]) -> Vec<Option<usize>> {
    // Leftmost-first greedy that prefers extending the previous match.
    let mut used = used.to_vec();
    let mut out = fixed.to_vec();
    for i in 0..options.len() {
        if out[i].is_some() {
            continue;
        }
        let prev = if i > 0 { out[i - 1] } else { None };
        let pick = prev
            .map(|p| p + 1)
            .filter(|j| options[i].contains(j) && !used[*j])
            .or_else(|| options[i].iter().copied().find(|&j| !used[j]));
        if let Some(j) = pick {
            used[j] = true;
            out[i] = Some(j);
        }
    }
    out
}

/// Size of a maximum bipartite matching (Kuhn's augmenting paths).
fn max_matching(options: &[Vec<usize>], used: &[bool]) -> usize {
    let mut owner: Vec<Option<usize>> = vec![None; used.len()];
    let mut size = 0;
    for i in 0..options.len() {
        let mut seen = vec![false; used.len()];
        if augment(i, options, used, &mut owner, &mut seen) {
            size += 1;
        }
    }
    size
}

fn augment(
    i: usize,
    options: &[Vec<usize>],
    blocked: &[bool],
    owner: &mut [Option<usize>],
    seen: &mut [bool],
) -> bool {
    for &j in &options[i] {
        if blocked[j] || seen[j] {
            continue;
        }
        seen[j] = true;
        if owner[j].is_none_or(|o| augment(o, options, blocked, owner, seen)) {
            owner[j] = Some(i);
            return true;
        }
    }
    false
}

struct Search<'a> {
    fixed: &'a [Option<usize>],
    options: &'a [Vec<usize>],
    cont_possible: &'a [usize],
    fixed_after: &'a [usize],
    target: usize,
    best: Vec<Option<usize>>,
    best_chunks: usize,
    current: Vec<Option<usize>>,
    used: Vec<bool>,
    nodes: usize,
    remaining_capacity: Vec<usize>,
}

impl Search<'_> {
    /// `matched` counts matches so far, `cont` the continuations among them.
    fn dfs(&mut self, i: usize, matched: usize, cont: usize) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET {
            return;
        }
        let n = self.options.len();
        if i == n {
            if matched == self.target {
                let chunks = matched - cont;
                if chunks < self.best_chunks {
                    self.best_chunks = chunks;
                    self.best = self.current.clone();
                }
            }
            return;
        }
        if matched + self.fixed_after[i] + self.remaining_capacity[i] < self.target {
            return;
        }
        // Chunks can only fall to target - (cont + possible future continuations).
        let lower = self.target.saturating_sub(cont + self.cont_possible[i]);
        if lower >= self.best_chunks {
            return;
        }
        let prev = if i > 0 { self.current[i - 1] } else { None };
        let extends = |j: usize| prev.is_some_and(|p| p + 1 == j);
        if let Some(j) = self.fixed[i] {
            self.dfs(i + 1, matched + 1, cont + usize::from(extends(j)));
            return;
        }
        for k in 0..self.options[i].len() {
            let j = self.options[i][k];
            if self.used[j] {
                continue;
            }
            self.used[j] = true;
            self.current[i] = Some(j);
            self.dfs(i + 1, matched + 1, cont + usize::from(extends(j)));
            self.current[i] = None;
            self.used[j] = false;
        }
        self.dfs(i + 1, matched, cont);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(c: &str, r: &str) -> f64 {
        meteor(c, r, &MeteorOptions::default())
    }

    #[test]
    fn identical_ten_tokens() {
        let s = "a b c d e f g h i j";
        let d = meteor_detail(s, s, &MeteorOptions::default());
        assert_eq!((d.matches, d.chunks), (10, 1));
        assert!((d.score - 0.9995).abs() < 1e-12);
    }

    #[test]
    fn swapped_pair() {
        assert!((m("b a", "a b") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(m("x y z", "a b c"), 0.0);
        assert_eq!(m("", "a b c"), 0.0);
        assert_eq!(m("a", ""), 0.0);
    }

    #[test]
    fn repeated_words_prefer_fewest_chunks() {
        // Greedy leftmost matching would split "the cat" across two chunks.
        let d = meteor_detail("the cat", "the dog the cat", &MeteorOptions::default());
        assert_eq!(d.chunks, 1);
        assert_eq!(d.alignment, vec![Some(2), Some(3)]);
    }

    #[test]
    fn case_is_ignored() {
        assert_eq!(m("The Cat", "the cat"), m("the cat", "the cat"));
    }

    #[test]
    fn stemming_stage_adds_matches() {
        let on = MeteorOptions { use_stemming: true, ..MeteorOptions::default() };
        assert_eq!(m("cats jumping", "cat jumps"), 0.0);
        let d = meteor_detail("cats jumping", "cat jump", &on);
        assert_eq!(d.matches, 2);
        assert!(d.score > 0.0);
        assert_eq!(stem("jumping"), "jump");
        assert_eq!(stem("is"), "is");
    }

    #[test]
    fn long_sentences_stay_tractable() {
        let words: Vec<String> = (0..120).map(|i| alloc::format!("w{}", i % 7)).collect();
        let s = words.join(" ");
        let d = meteor_detail(&s, &s, &MeteorOptions::default());
        assert_eq!(d.matches, 120);
        assert_eq!(d.chunks, 1);
    }
}
