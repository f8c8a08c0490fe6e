//! Exhaustive alignment oracle for METEOR.
//!
//! METEOR only compares tokens for equality, so renaming tokens bijectively
//! leaves every score unchanged. The sweep therefore visits one
//! representative per renaming class: restricted-growth strings over the
//! concatenated pair. That covers every pair of sentences of length at most
//! six over a five-token alphabet. A direct sweep over raw pairs up to
//! length four double-checks the reduction.

use thinkguard_core::metrics::meteor::{meteor_detail, MeteorOptions};

const ALPHABET: usize = 5;
const MAX_LEN: usize = 6;

/// Best (matches, chunks) over every partial injective alignment.
fn brute_force(cand: &[u8], refs: &[u8]) -> (usize, usize) {
    struct Walk<'a> {
        cand: &'a [u8],
        refs: &'a [u8],
        used: [bool; MAX_LEN],
        best: (usize, usize),
    }
    impl Walk<'_> {
        /// `prev` is the reference position aligned to candidate `i - 1`.
        fn rec(&mut self, i: usize, prev: Option<usize>, m: usize, chunks: usize) {
            if i == self.cand.len() {
                if m > self.best.0 || (m == self.best.0 && chunks < self.best.1) {
                    self.best = (m, chunks);
                }
                return;
            }
            self.rec(i + 1, None, m, chunks);
            for j in 0..self.refs.len() {
                if !self.used[j] && self.cand[i] == self.refs[j] {
                    let starts_chunk = !(j > 0 && prev == Some(j - 1));
                    self.used[j] = true;
                    self.rec(i + 1, Some(j), m + 1, chunks + usize::from(starts_chunk));
                    self.used[j] = false;
                }
            }
        }
    }
    let mut w = Walk { cand, refs, used: [false; MAX_LEN], best: (0, usize::MAX) };
    w.rec(0, None, 0, 0);
    if w.best.0 == 0 {
        w.best.1 = 0;
    }
    w.best
}

fn oracle_score(cand_len: usize, ref_len: usize, m: usize, chunks: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand_len as f64;
    let r = m as f64 / ref_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    fmean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

fn text(tokens: &[u8]) -> String {
    tokens.iter().map(|t| format!("t{t}")).collect::<Vec<_>>().join(" ")
}

fn check(cand: &[u8], refs: &[u8], opts: &MeteorOptions) {
    let (m, chunks) = brute_force(cand, refs);
    let d = meteor_detail(&text(cand), &text(refs), opts);
    assert_eq!((d.matches, d.chunks), (m, chunks), "{cand:?} vs {refs:?}");
    let expected = oracle_score(cand.len(), refs.len(), m, chunks);
    assert!((d.score - expected).abs() < 1e-12, "{cand:?} vs {refs:?}: {} vs {expected}", d.score);
}

/// Calls `f` on every restricted-growth string of length `n` with at most `k` symbols.
fn restricted_growth(n: usize, k: usize, f: &mut dyn FnMut(&[u8])) {
    fn rec(buf: &mut Vec<u8>, n: usize, k: usize, max: u8, f: &mut dyn FnMut(&[u8])) {
        if buf.len() == n {
            f(buf);
            return;
        }
        let limit = if buf.is_empty() { 0 } else { (max + 1).min(k as u8 - 1) };
        for s in 0..=limit {
            buf.push(s);
            rec(buf, n, k, max.max(s), f);
            buf.pop();
        }
    }
    rec(&mut Vec::with_capacity(n), n, k, 0, f);
}

#[test]
fn exhaustive_agreement_up_to_renaming() {
    let opts = MeteorOptions::default();
    let mut pairs = 0usize;
    for a in 0..=MAX_LEN {
        for b in 0..=MAX_LEN {
            restricted_growth(a + b, ALPHABET, &mut |s| {
                check(&s[..a], &s[a..], &opts);
                pairs += 1;
            });
        }
    }
    assert!(pairs > 3_000_000, "{pairs}");
}

#[test]
fn raw_pairs_up_to_length_four() {
    fn all(len: usize) -> Vec<Vec<u8>> {
        let mut out = vec![Vec::new()];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|p| (0..ALPHABET as u8).map(move |t| [p.as_slice(), &[t]].concat()))
                .collect();
        }
        out
    }
    let sentences: Vec<Vec<u8>> = (0..=4).flat_map(all).collect();
    let opts = MeteorOptions::default();
    for c in &sentences {
        for r in &sentences {
            check(c, r, &opts);
        }
    }
}

#[test]
fn hand_derived_values() {
    let opts = MeteorOptions::default();
    let ten = "a b c d e f g h i j";
    let s = meteor_detail(ten, ten, &opts).score;
    assert!((s - 0.9995).abs() < 1e-6);
    assert!((meteor_detail("b a", "a b", &opts).score - 0.5).abs() < 1e-9);
    assert_eq!(meteor_detail("x y", "a b", &opts).score, 0.0);
}
