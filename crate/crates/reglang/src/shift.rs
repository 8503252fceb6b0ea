//! Distribution-shift quantities: norms, worst-case bounds, Monte-Carlo and
//! state-distribution TV estimators, an exact enumeration oracle, and
//! accuracy lower bounds.
//!
//! Throughout this module TV follows the unnormalized convention
//! `TV(P,Q) = Σ|P − Q|`, so distances between distributions live in `[0, 2]`.

use crate::exec;
use crate::markov::{EdgeMarkovChain, LikelihoodMode, MarkovError};
use crate::rng;
use std::collections::HashMap;

#[derive(Debug, thiserror::Error)]
pub enum ShiftError {
    #[error("chains must share the same DFA and table shape")]
    ShapeMismatch,
    #[error("enumeration budget exceeded ({0} profiles)")]
    BudgetExceeded(u64),
    #[error("profile enumeration supports at most {max} state-symbol pairs, chain has {got}")]
    TooManyDimensions { max: usize, got: usize },
    #[error("profile enumeration supports max_len < {max}, got {got}")]
    LengthOverflow { max: usize, got: usize },
    #[error("estimator needs at least one sample")]
    EmptySample,
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Budget on profile expansions in [`exact_tv_enumeration`].
pub const PROFILE_BUDGET: u64 = 200_000_000;

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Exact bracket `lower <= TV <= upper` from length-bounded enumeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvBracket {
    pub lower: f64,
    pub upper: f64,
}

/// Empirical or exact distribution over DFA states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution {
    pub probs: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    Empirical { n: usize },
}

fn check_same_shape(p: &EdgeMarkovChain, q: &EdgeMarkovChain) -> Result<(), ShiftError> {
    if p.dfa() != q.dfa() || p.rows().len() != q.rows().len() {
        return Err(ShiftError::ShapeMismatch);
    }
    Ok(())
}

/// Max over states of the L1 distance between full per-state rows
/// (emissions plus termination).
pub fn epsilon(p: &EdgeMarkovChain, q: &EdgeMarkovChain) -> Result<f64, ShiftError> {
    check_same_shape(p, q)?;
    Ok(row_l1_max(p, q))
}

/// Max row L1 distance between the tables (the induced infinity norm).
pub fn shift_norm(p: &EdgeMarkovChain, q: &EdgeMarkovChain) -> Result<f64, ShiftError> {
    check_same_shape(p, q)?;
    Ok(row_l1_max(p, q))
}

/// Max absolute entrywise difference between the tables.
pub fn entrywise_norm(p: &EdgeMarkovChain, q: &EdgeMarkovChain) -> Result<f64, ShiftError> {
    check_same_shape(p, q)?;
    let mut best: f64 = 0.0;
    for (rp, rq) in p.rows().iter().zip(q.rows()) {
        for (a, b) in rp.iter().zip(rq) {
            best = best.max((a - b).abs());
        }
    }
    Ok(best)
}

fn row_l1_max(p: &EdgeMarkovChain, q: &EdgeMarkovChain) -> f64 {
    p.rows()
        .iter()
        .zip(q.rows())
        .map(|(rp, rq)| rp.iter().zip(rq).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Worst-case end-to-end shift term `2·T·|S|^(T+1)·ε`. Returns the shift
/// term only; callers add their training loss. Overflow saturates to `+inf`.
pub fn bound_e2e_worstcase(epsilon: f64, t: f64, n_states: usize) -> f64 {
    2.0 * t * (n_states as f64).powf(t + 1.0) * epsilon
}

/// Worst-case compositional shift term `2·T²·ε`.
pub fn bound_comp_worstcase(epsilon: f64, t: f64) -> f64 {
    2.0 * t * t * epsilon
}

/// Mixture bound `(tv_pos + tv_neg) / 2` for labeled data drawn half from a
/// positive-chain pair and half from a negative-chain pair.
pub fn mixture_tv_bound(tv_pos: f64, tv_neg: f64) -> f64 {
    0.5 * (tv_pos + tv_neg)
}

/// Accuracy lower bound `clamp(1 - train_loss - shift_term, 0, 1)`.
pub fn accuracy_lower_bound(train_loss: f64, shift_term: f64) -> f64 {
    (1.0 - train_loss - shift_term).clamp(0.0, 1.0)
}

fn tv_sample_values(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    n: usize,
    seed: u64,
    sequential: bool,
) -> Result<Vec<f64>, ShiftError> {
    check_same_shape(p, q)?;
    if n == 0 {
        return Err(ShiftError::EmptySample);
    }
    let one = |i: usize| -> Result<f64, MarkovError> {
        let mut stream = rng::substream(seed, i as u64);
        let ex = p.sample(&mut stream)?;
        let lp = ex.logp;
        let lq = q.string_likelihood(&ex.x, LikelihoodMode::Full)?;
        // |1 - Q(x)/P(x)|, with Q(x) = 0 giving a ratio of 0.
        let ratio = if lq == f64::NEG_INFINITY {
            0.0
        } else {
            (lq - lp).exp()
        };
        Ok((1.0 - ratio).abs())
    };
    let values = if sequential {
        exec::map_indexed_seq(n, one)
    } else {
        exec::map_indexed(n, one)
    };
    Ok(values.into_iter().collect::<Result<Vec<_>, _>>()?)
}

fn summarize(values: &[f64]) -> TvEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n * (n - 1.0)).max(1.0);
    TvEstimate {
        mean,
        std_error: var.sqrt(),
    }
}

/// Monte-Carlo estimate of `TV(P(x), Q(x)) = E_{x~P} |1 − Q(x)/P(x)|` from
/// `n` samples of `p`, with the standard error of the mean. Both likelihoods
/// use full (normalized) mode. Sample `i` uses substream `(seed, i)`.
pub fn estimate_tv_strings_mc(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    n: usize,
    seed: u64,
) -> Result<TvEstimate, ShiftError> {
    Ok(summarize(&tv_sample_values(p, q, n, seed, false)?))
}

/// Sequential twin of [`estimate_tv_strings_mc`]; same output bit-for-bit.
pub fn estimate_tv_strings_mc_seq(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    n: usize,
    seed: u64,
) -> Result<TvEstimate, ShiftError> {
    Ok(summarize(&tv_sample_values(p, q, n, seed, true)?))
}

/// Exact bracket around `TV(P(x), Q(x))` by enumerating all strings of
/// length at most `max_len` and adding the exact residual masses of both
/// chains beyond it: `lower = Σ_{|x| ≤ L} |P(x) − Q(x)|` and
/// `upper = lower + tail_P + tail_Q`, so `lower ≤ TV ≤ upper`.
///
/// Because both chains share the DFA, a string's probability under either
/// chain depends only on how many times each `(state, symbol)` edge fires
/// (plus the final state). Strings are therefore enumerated as such count
/// profiles with exact multiplicities — a dynamic program whose state count
/// stays polynomial in `max_len` for the small automata used here.
pub fn exact_tv_enumeration(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    max_len: usize,
) -> Result<TvBracket, ShiftError> {
    check_same_shape(p, q)?;
    let dfa = p.dfa();
    let n_states = dfa.n_states();
    let n_sym = p.n_symbols();
    let dims = n_states * n_sym;
    // 12-bit packed counts, 8-bit state: up to 10 dimensions fit in a u128.
    if dims > 10 {
        return Err(ShiftError::TooManyDimensions { max: 10, got: dims });
    }
    if max_len >= (1 << 12) {
        return Err(ShiftError::LengthOverflow {
            max: 1 << 12,
            got: max_len,
        });
    }

    let pack = |state: usize, counts: &[u16]| -> u128 {
        let mut key = state as u128;
        for (d, &c) in counts.iter().enumerate() {
            key |= (c as u128) << (8 + 12 * d);
        }
        key
    };
    let unpack = |key: u128, counts: &mut [u16]| -> usize {
        for (d, c) in counts.iter_mut().enumerate() {
            *c = ((key >> (8 + 12 * d)) & 0xfff) as u16;
        }
        (key & 0xff) as usize
    };

    // Log emission tables; -inf encodes unreachable edges.
    let ln_p: Vec<f64> = (0..n_states)
        .flat_map(|s| (0..n_sym).map(move |a| (s, a)))
        .map(|(s, a)| p.emission(s, a).ln())
        .collect();
    let ln_q: Vec<f64> = (0..n_states)
        .flat_map(|s| (0..n_sym).map(move |a| (s, a)))
        .map(|(s, a)| q.emission(s, a).ln())
        .collect();
    let forbid_p = p.forbid_empty();
    let forbid_q = q.forbid_empty();
    let s0 = dfa.start();
    let first_p = -(1.0 - p.termination(s0)).ln();
    let first_q = -(1.0 - q.termination(s0)).ln();

    let mut lower = 0.0;
    let mut budget = PROFILE_BUDGET;
    let mut current: HashMap<u128, f64> = HashMap::new();
    current.insert(pack(s0, &vec![0u16; dims]), 1.0);
    let mut counts = vec![0u16; dims];

    for t in 0..=max_len {
        let mut next: HashMap<u128, f64> = HashMap::with_capacity(current.len() * 2);
        for (&key, &multiplicity) in current.iter() {
            budget = budget
                .checked_sub(1)
                .ok_or(ShiftError::BudgetExceeded(PROFILE_BUDGET))?;
            let state = unpack(key, &mut counts);
            // Log-probability of any single string with this profile.
            let mut lp = 0.0;
            let mut lq = 0.0;
            for (d, &c) in counts.iter().enumerate() {
                if c > 0 {
                    lp += c as f64 * ln_p[d];
                    lq += c as f64 * ln_q[d];
                }
            }
            if t >= 1 {
                if forbid_p {
                    lp += first_p;
                }
                if forbid_q {
                    lq += first_q;
                }
            }
            // Termination contribution: strings of exactly length t.
            let term_p = if t == 0 && forbid_p {
                f64::NEG_INFINITY
            } else {
                lp + p.termination(state).ln()
            };
            let term_q = if t == 0 && forbid_q {
                f64::NEG_INFINITY
            } else {
                lq + q.termination(state).ln()
            };
            if term_p > f64::NEG_INFINITY || term_q > f64::NEG_INFINITY {
                let m = term_p.max(term_q);
                let diff = ((term_p - m).exp() - (term_q - m).exp()).abs();
                lower += (multiplicity.ln() + m).exp() * diff;
            }
            if t == max_len {
                continue;
            }
            for a in 0..n_sym {
                let d = state * n_sym + a;
                if p.emission(state, a) > 0.0 || q.emission(state, a) > 0.0 {
                    counts[d] += 1;
                    let next_key = pack(dfa.step(state, a), &counts);
                    counts[d] -= 1;
                    *next.entry(next_key).or_insert(0.0) += multiplicity;
                }
            }
        }
        if t < max_len {
            current = next;
        }
    }

    let (_, tail_p) = p.length_mass_and_tail(max_len);
    let (_, tail_q) = q.length_mass_and_tail(max_len);
    Ok(TvBracket {
        lower,
        upper: lower + tail_p + tail_q,
    })
}

fn state_histogram(
    emc: &EdgeMarkovChain,
    n: usize,
    seed: u64,
    sequential: bool,
) -> Result<Vec<f64>, ShiftError> {
    if n == 0 {
        return Err(ShiftError::EmptySample);
    }
    let per_example = |i: usize| -> Result<Vec<u64>, MarkovError> {
        let mut stream = rng::substream(seed, i as u64);
        let ex = emc.sample(&mut stream)?;
        let mut counts = vec![0u64; emc.dfa().n_states()];
        for &s in ex.z.states() {
            counts[s] += 1;
        }
        Ok(counts)
    };
    let all = if sequential {
        exec::map_indexed_seq(n, per_example)
    } else {
        exec::map_indexed(n, per_example)
    };
    let mut pooled = vec![0u64; emc.dfa().n_states()];
    for counts in all {
        for (acc, c) in pooled.iter_mut().zip(counts?) {
            *acc += c;
        }
    }
    let total: u64 = pooled.iter().sum();
    Ok(pooled.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Samples `n` strings and pools every visited state (including the final
/// one) into a normalized histogram.
pub fn estimate_state_distribution(
    emc: &EdgeMarkovChain,
    n: usize,
    seed: u64,
) -> Result<StateDistribution, ShiftError> {
    Ok(StateDistribution {
        probs: state_histogram(emc, n, seed, false)?,
        provenance: Provenance::Empirical { n },
    })
}

/// Sequential twin of [`estimate_state_distribution`]; same output
/// bit-for-bit.
pub fn estimate_state_distribution_seq(
    emc: &EdgeMarkovChain,
    n: usize,
    seed: u64,
) -> Result<StateDistribution, ShiftError> {
    Ok(StateDistribution {
        probs: state_histogram(emc, n, seed, true)?,
        provenance: Provenance::Empirical { n },
    })
}

/// Exact counterpart of [`estimate_state_distribution`].
pub fn exact_state_distribution(emc: &EdgeMarkovChain) -> Result<StateDistribution, ShiftError> {
    Ok(StateDistribution {
        probs: emc.exact_state_distribution()?,
        provenance: Provenance::Exact,
    })
}

fn tv_vec(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Aggregated compositional loss estimate:
/// `ltilde + T̄·TV(P̄(s,σ), Q̄(s,σ)) + TV(P̄(s), Q̄(s))`,
/// where `P̄`/`Q̄` pool visited states across all steps of `n` sampled
/// strings from each chain (independent substreams of `seed`),
/// `P̄(s,σ) = P̄(s)·P(σ|s)`, and `T̄` is the exact expected length of `p`.
pub fn bound_comp_estimate(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    n: usize,
    ltilde: f64,
    seed: u64,
) -> Result<f64, ShiftError> {
    check_same_shape(p, q)?;
    let p_bar = estimate_state_distribution(p, n, rng::mix(seed, &[0]))?.probs;
    let q_bar = estimate_state_distribution(q, n, rng::mix(seed, &[1]))?.probs;
    let t_bar = p.expected_length()?;
    Ok(ltilde + comp_shift_terms(p, q, &p_bar, &q_bar, t_bar))
}

/// The shift terms of [`bound_comp_estimate`] with caller-supplied state
/// distributions (e.g. exact ones).
pub fn comp_shift_terms(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    p_bar: &[f64],
    q_bar: &[f64],
    t_bar: f64,
) -> f64 {
    let n_sym = p.n_symbols();
    let joint = |bar: &[f64], chain: &EdgeMarkovChain| -> Vec<f64> {
        let mut out = Vec::with_capacity(bar.len() * n_sym);
        for (s, &w) in bar.iter().enumerate() {
            for a in 0..n_sym {
                out.push(w * chain.emission(s, a));
            }
        }
        out
    };
    let tv_joint = tv_vec(&joint(p_bar, p), &joint(q_bar, q));
    let tv_state = tv_vec(p_bar, q_bar);
    t_bar * tv_joint + tv_state
}

/// Unaggregated per-step variant of [`bound_comp_estimate`], kept for
/// comparison: estimates `P̂_t(s)` separately for each step (normalized over
/// strings still alive at `t`), sums joint TVs for `t = 1..⌈T̄⌉`, and adds
/// the TV between final-state histograms.
pub fn bound_comp_estimate_per_t(
    p: &EdgeMarkovChain,
    q: &EdgeMarkovChain,
    n: usize,
    ltilde: f64,
    seed: u64,
) -> Result<f64, ShiftError> {
    check_same_shape(p, q)?;
    if n == 0 {
        return Err(ShiftError::EmptySample);
    }
    let t_bar = p.expected_length()?;
    let horizon = t_bar.ceil() as usize;
    let n_states = p.dfa().n_states();
    let collect = |emc: &EdgeMarkovChain, sub: u64| -> Result<(Vec<Vec<f64>>, Vec<f64>), ShiftError> {
        let samples = exec::map_indexed(n, |i| {
            let mut stream = rng::substream(rng::mix(seed, &[sub]), i as u64);
            emc.sample(&mut stream)
        });
        let mut per_t = vec![vec![0.0; n_states]; horizon + 1];
        let mut alive = vec![0u64; horizon + 1];
        let mut final_hist = vec![0.0; n_states];
        for s in samples {
            let ex = s?;
            let states = ex.z.states();
            for (t, &st) in states.iter().enumerate().take(horizon + 1) {
                per_t[t][st] += 1.0;
                alive[t] += 1;
            }
            final_hist[ex.z.last()] += 1.0;
        }
        for (t, hist) in per_t.iter_mut().enumerate() {
            if alive[t] > 0 {
                for v in hist.iter_mut() {
                    *v /= alive[t] as f64;
                }
            }
        }
        for v in final_hist.iter_mut() {
            *v /= n as f64;
        }
        Ok((per_t, final_hist))
    };
    let (p_t, p_final) = collect(p, 0)?;
    let (q_t, q_final) = collect(q, 1)?;
    let n_sym = p.n_symbols();
    let mut total = ltilde;
    for t in 1..=horizon {
        let mut tv = 0.0;
        for s in 0..n_states {
            for a in 0..n_sym {
                tv += (p_t[t][s] * p.emission(s, a) - q_t[t][s] * q.emission(s, a)).abs();
            }
        }
        total += tv;
    }
    total += tv_vec(&p_final, &q_final);
    Ok(total)
}

/// Everything the `report` CLI emits for one `(delta, seed)` cell.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ShiftReport {
    pub delta: f64,
    pub shift_norm: f64,
    pub entrywise_norm: f64,
    pub epsilon: f64,
    pub bound_e2e_worstcase: f64,
    pub bound_comp_worstcase: f64,
    pub tv_mc: f64,
    pub tv_mc_se: f64,
    pub comp_estimate: f64,
    pub acc_lower_e2e: f64,
    pub acc_lower_comp: f64,
    pub t_heuristic: f64,
    pub n: usize,
    pub seed: u64,
}

impl ShiftReport {
    pub const CSV_HEADER: &'static str = "delta,shift_norm,entrywise_norm,epsilon,bound_e2e_wc,\
bound_comp_wc,tv_mc,tv_mc_se,comp_est,acc_lower_e2e,acc_lower_comp,T_heuristic,n,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.delta,
            self.shift_norm,
            self.entrywise_norm,
            self.epsilon,
            self.bound_e2e_worstcase,
            self.bound_comp_worstcase,
            self.tv_mc,
            self.tv_mc_se,
            self.comp_estimate,
            self.acc_lower_e2e,
            self.acc_lower_comp,
            self.t_heuristic,
            self.n,
            self.seed
        )
    }
}

/// Builds the full shift report for one family cell. `train_loss` feeds the
/// end-to-end accuracy bound (via the unshifted-negative mixture), `ltilde`
/// the compositional estimate; pass zero for pure distribution reports.
pub fn build_shift_report(
    family: &crate::markov::ShiftFamily,
    delta: f64,
    n: usize,
    seed: u64,
    train_loss: f64,
    ltilde: f64,
) -> Result<ShiftReport, ShiftError> {
    let p = family.base();
    let q = family.perturbed(delta)?;
    let eps = epsilon(p, &q)?;
    let t_bar = p.expected_length()?;
    let tv = estimate_tv_strings_mc(p, &q, n, rng::mix(seed, &[10]))?;
    let comp = bound_comp_estimate(p, &q, n, ltilde, rng::mix(seed, &[11]))?;
    Ok(ShiftReport {
        delta,
        shift_norm: shift_norm(p, &q)?,
        entrywise_norm: entrywise_norm(p, &q)?,
        epsilon: eps,
        bound_e2e_worstcase: bound_e2e_worstcase(eps, t_bar, p.dfa().n_states()),
        bound_comp_worstcase: bound_comp_worstcase(eps, t_bar),
        tv_mc: tv.mean,
        tv_mc_se: tv.std_error,
        comp_estimate: comp,
        acc_lower_e2e: accuracy_lower_bound(train_loss, mixture_tv_bound(tv.mean, 0.0)),
        acc_lower_comp: accuracy_lower_bound(0.0, comp),
        t_heuristic: t_bar,
        n,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::parity_shift_family;
    use approx::assert_relative_eq;

    #[test]
    fn norms_on_parity_family() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let q85 = family.perturbed(0.85).unwrap();
        assert_relative_eq!(epsilon(p, &q85).unwrap(), 1.3, epsilon = 1e-12);
        assert_relative_eq!(shift_norm(p, &q85).unwrap(), 1.3, epsilon = 1e-12);
        assert_relative_eq!(entrywise_norm(p, &q85).unwrap(), 0.65, epsilon = 1e-12);
        let q8 = family.perturbed(0.8).unwrap();
        assert_relative_eq!(shift_norm(p, &q8).unwrap(), 1.2, epsilon = 1e-12);
        assert_relative_eq!(epsilon(p, p).unwrap(), 0.0);
        for &d in &[0.25, 0.4, 0.6, 0.85] {
            let q = family.perturbed(d).unwrap();
            assert_relative_eq!(shift_norm(p, &q).unwrap(), 2.0 * (d - 0.2), epsilon = 1e-12);
        }
    }

    #[test]
    fn disjoint_rows_have_tv_two() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let dfa = family.label_dfa().clone();
        let a = EdgeMarkovChain::new(
            dfa.clone(),
            vec![vec![1.0, 0.0, 0.0], vec![0.7, 0.2, 0.1]],
            false,
            false,
        )
        .unwrap();
        let b = EdgeMarkovChain::new(
            dfa,
            vec![vec![0.0, 1.0, 0.0], vec![0.7, 0.2, 0.1]],
            false,
            false,
        )
        .unwrap();
        assert_relative_eq!(epsilon(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn worstcase_bounds_match_arithmetic() {
        assert_relative_eq!(bound_e2e_worstcase(0.0, 10.0, 2), 0.0);
        assert_relative_eq!(bound_e2e_worstcase(0.1, 10.0, 2), 4096.0);
        assert_relative_eq!(bound_e2e_worstcase(0.5, 1.0, 2), 4.0);
        assert_relative_eq!(bound_comp_worstcase(0.1, 10.0), 20.0);
        assert_relative_eq!(bound_comp_worstcase(0.0, 5.0), 0.0);
        assert!(bound_e2e_worstcase(1.0, 1e6, 2).is_infinite());
        for t in 1..=20 {
            for eps in [0.1, 0.5, 1.0] {
                assert!(bound_comp_worstcase(eps, t as f64) <= bound_e2e_worstcase(eps, t as f64, 2));
            }
        }
    }

    #[test]
    fn mixture_and_accuracy_bounds() {
        assert_relative_eq!(mixture_tv_bound(0.0, 0.0), 0.0);
        assert_relative_eq!(mixture_tv_bound(1.3, 0.0), 0.65);
        assert_relative_eq!(mixture_tv_bound(2.0, 2.0), 2.0);
        assert_relative_eq!(accuracy_lower_bound(0.0, 0.0), 1.0);
        assert_relative_eq!(accuracy_lower_bound(0.0, 2.0), 0.0);
        assert_relative_eq!(accuracy_lower_bound(0.0, 0.3), 0.7);
    }

    #[test]
    fn identical_chains_estimate_exactly_zero() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let est = estimate_tv_strings_mc(p, p, 500, 3).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn par_and_seq_estimators_agree_bitwise() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let q = family.perturbed(0.5).unwrap();
        let a = estimate_tv_strings_mc(p, &q, 2000, 7).unwrap();
        let b = estimate_tv_strings_mc_seq(p, &q, 2000, 7).unwrap();
        assert_eq!(a, b);
        let da = estimate_state_distribution(p, 2000, 7).unwrap();
        let db = estimate_state_distribution_seq(p, 2000, 7).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn enumeration_bracket_on_identical_chains() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let bracket = exact_tv_enumeration(p, p, 60).unwrap();
        assert!(bracket.lower.abs() < 1e-12);
        let tighter = exact_tv_enumeration(p, p, 200).unwrap();
        assert!(tighter.upper < bracket.upper);
    }

    #[test]
    fn enumeration_matches_brute_force_on_short_strings() {
        // Against a literal string enumeration at small length the profile
        // DP must agree exactly.
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let q = family.perturbed(0.6).unwrap();
        let max_len = 10;
        let mut brute = 0.0;
        for len in 0..=max_len {
            for code in 0u64..(1 << len) {
                let x: String = (0..len)
                    .map(|b| if code >> b & 1 == 1 { '1' } else { '0' })
                    .collect();
                let lp = p.string_likelihood(&x, LikelihoodMode::Full).unwrap();
                let lq = q.string_likelihood(&x, LikelihoodMode::Full).unwrap();
                brute += (lp.exp() - lq.exp()).abs();
            }
        }
        let bracket = exact_tv_enumeration(p, &q, max_len).unwrap();
        assert_relative_eq!(bracket.lower, brute, epsilon = 1e-12);
        assert!(bracket.upper >= bracket.lower);
    }

    #[test]
    fn disjoint_support_chains_approach_two() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let dfa = family.label_dfa().clone();
        // P's support is {"", "1", "11", ...}; Q's is exactly {"0"}.
        let p = EdgeMarkovChain::new(
            dfa.clone(),
            vec![vec![0.0, 0.5, 0.5], vec![0.0, 0.0, 1.0]],
            false,
            false,
        )
        .unwrap();
        let q = EdgeMarkovChain::new(
            dfa,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
            false,
            false,
        )
        .unwrap();
        let bracket = exact_tv_enumeration(&p, &q, 40).unwrap();
        assert!(bracket.lower > 2.0 - 1e-9, "lower {}", bracket.lower);
        assert!(bracket.upper <= 2.0 + 1e-9);
    }

    #[test]
    fn single_state_chain_concentrates_mass() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let dfa = family.label_dfa().complement();
        // complement chain emitting only '1' (self-loop at s0), ending at s0
        let emc = EdgeMarkovChain::new(
            dfa,
            vec![vec![0.0, 0.6, 0.4], vec![0.25, 0.25, 0.5]],
            false,
            false,
        )
        .unwrap();
        let dist = estimate_state_distribution(&emc, 200, 5).unwrap();
        assert_relative_eq!(dist.probs[0], 1.0);
        assert_relative_eq!(dist.probs[1], 0.0);
    }

    #[test]
    fn comp_estimate_identity_is_near_zero() {
        // Two independent histograms differ only by sampling noise; the
        // joint term is scaled by T_bar = 49, so the estimate is
        // O(T_bar/sqrt(n·T_bar)) — about 0.05 at n = 20000.
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let est = bound_comp_estimate(p, p, 20000, 0.0, 17).unwrap();
        assert!(est.abs() < 0.2, "identity comp estimate {est}");
    }

    #[test]
    fn comp_estimate_grows_with_delta() {
        let family = parity_shift_family(&[0.2]).unwrap();
        let p = family.base();
        let q_small = family.perturbed(0.4).unwrap();
        let q_large = family.perturbed(0.85).unwrap();
        let small = bound_comp_estimate(p, &q_small, 10000, 0.0, 23).unwrap();
        let large = bound_comp_estimate(p, &q_large, 10000, 0.0, 23).unwrap();
        assert!(small <= large, "{small} > {large}");
    }
}
