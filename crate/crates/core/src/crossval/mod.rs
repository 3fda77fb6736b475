//! Recording-grouped stratified folds and the nested selection protocol.

mod search;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use search::{
    aggregate, nested_cv, write_search_csv, Candidate, CvData, CvOptions, CvResult, LeakageAudit,
    OuterFold, SearchRow, SearchSpace,
};

use crate::corpus::AnnotationTrack;
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    /// recording id -> fold index
    pub assignment: BTreeMap<String, usize>,
    /// Per fold, segments per class.
    pub counts: Vec<BTreeMap<String, usize>>,
    /// Classes with fewer than `k` segments overall; they cannot appear in every fold.
    pub excluded: Vec<String>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    /// Recording ids of fold `f`, sorted.
    pub fn members(&self, f: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, &v)| v == f)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        (0..self.k)
            .map(|f| self.assignment.values().filter(|&&v| v == f).count())
            .collect()
    }

    /// Every fold non-empty and every index in range.
    pub fn validate(&self) -> Result<()> {
        if let Some((id, f)) = self.assignment.iter().find(|(_, &f)| f >= self.k) {
            return Err(Error::InvalidInput(format!(
                "recording {id} assigned to fold {f} of {}",
                self.k
            )));
        }
        if let Some(f) = self.fold_sizes().iter().position(|&n| n == 0) {
            return Err(Error::InvalidInput(format!("fold {f} is empty")));
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json_atomic(path, self)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let plan: FoldPlan = serde_json::from_slice(&std::fs::read(path)?)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Greedy stratified assignment of whole recordings to `k` folds.
///
/// Recordings are visited by descending content of the rarest classes (seeded order among
/// equals) and each goes to the fold where it least increases the chi-square distance
/// between per-fold class counts and their even share; a swap pass then polishes the
/// result. Fold sizes stay within one recording of each other.
pub fn make_folds(tracks: &[AnnotationTrack], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if tracks.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} recordings cannot fill {k} folds",
            tracks.len()
        )));
    }
    let mut seen = BTreeSet::new();
    if let Some(t) = tracks
        .iter()
        .find(|t| !seen.insert(t.recording_id.as_str()))
    {
        return Err(Error::InvalidInput(format!(
            "recording {} listed twice",
            t.recording_id
        )));
    }
    let classes: Vec<String> = tracks
        .iter()
        .flat_map(|t| t.events.iter().map(|e| e.call_type.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let profile: Vec<Vec<usize>> = tracks
        .iter()
        .map(|t| {
            classes
                .iter()
                .map(|c| t.events.iter().filter(|e| &e.call_type == c).count())
                .collect()
        })
        .collect();
    let totals: Vec<usize> = (0..classes.len())
        .map(|c| profile.iter().map(|p| p[c]).sum())
        .collect();
    let mut rarity: Vec<usize> = (0..classes.len()).collect();
    rarity.sort_by_key(|&c| (totals[c], c));

    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.shuffle(&mut rng_for(seed, "crossval.folds", 0));
    order.sort_by(|&a, &b| {
        let ka: Vec<usize> = rarity.iter().map(|&c| profile[a][c]).collect();
        let kb: Vec<usize> = rarity.iter().map(|&c| profile[b][c]).collect();
        kb.cmp(&ka)
    });

    let n = tracks.len();
    let (lo, hi) = (n / k, n.div_ceil(k));
    let expected: Vec<f64> = totals.iter().map(|&g| g as f64 / k as f64).collect();
    let mut counts = vec![vec![0usize; classes.len()]; k];
    let mut sizes = vec![0usize; k];
    let mut fold_of = vec![0usize; n];
    for (placed, &r) in order.iter().enumerate() {
        let left = n - placed;
        let short: Vec<usize> = (0..k).filter(|&f| sizes[f] < lo).collect();
        let need: usize = short.iter().map(|&f| lo - sizes[f]).sum();
        let eligible: Vec<usize> = if left <= need {
            short
        } else {
            (0..k).filter(|&f| sizes[f] < hi).collect()
        };
        let cost = |f: usize| -> f64 {
            (0..classes.len())
                .filter(|&c| expected[c] > 0.0)
                .map(|c| {
                    let before = counts[f][c] as f64 - expected[c];
                    let after = before + profile[r][c] as f64;
                    (after * after - before * before) / expected[c]
                })
                .sum()
        };
        let best = eligible
            .iter()
            .copied()
            .min_by(|&a, &b| {
                cost(a)
                    .total_cmp(&cost(b))
                    .then(sizes[a].cmp(&sizes[b]))
                    .then(
                        counts[a]
                            .iter()
                            .sum::<usize>()
                            .cmp(&counts[b].iter().sum::<usize>()),
                    )
                    .then(a.cmp(&b))
            })
            .expect("size bounds always leave an eligible fold");
        for (acc, &v) in counts[best].iter_mut().zip(&profile[r]) {
            *acc += v;
        }
        sizes[best] += 1;
        fold_of[r] = best;
    }

    refine(&profile, &totals, &mut fold_of, &mut counts);

    let excluded: Vec<String> = classes
        .iter()
        .zip(&totals)
        .filter(|(_, &g)| g < k)
        .map(|(c, _)| c.clone())
        .collect();
    for c in &excluded {
        log::warn!("class {c} has fewer than {k} segments; flagged for exclusion");
    }
    let plan = FoldPlan {
        k,
        seed,
        assignment: tracks
            .iter()
            .zip(&fold_of)
            .map(|(t, &f)| (t.recording_id.clone(), f))
            .collect(),
        counts: counts
            .iter()
            .map(|row| classes.iter().cloned().zip(row.iter().copied()).collect())
            .collect(),
        classes,
        excluded,
    };
    plan.validate()?;
    Ok(plan)
}

/// Pearson chi-square of the fold-by-class contingency table: how far each fold's class
/// mix is from the corpus-wide mix.
fn contingency_chi2(counts: &[Vec<usize>], totals: &[usize]) -> f64 {
    let t: usize = totals.iter().sum();
    if t == 0 {
        return 0.0;
    }
    let mut chi = 0.0;
    for row in counts {
        let r: usize = row.iter().sum();
        for (&n, &g) in row.iter().zip(totals) {
            let e = r as f64 * g as f64 / t as f64;
            if e > 0.0 {
                chi += (n as f64 - e).powi(2) / e;
            }
        }
    }
    chi
}

/// Pairwise swaps between folds while the best swap lowers the contingency chi-square.
/// Swaps keep fold sizes fixed.
fn refine(
    profile: &[Vec<usize>],
    totals: &[usize],
    fold_of: &mut [usize],
    counts: &mut [Vec<usize>],
) {
    let n = profile.len();
    let moved = |c: &[usize], out: &[usize], inn: &[usize]| -> Vec<usize> {
        c.iter()
            .zip(out)
            .zip(inn)
            .map(|((&v, &o), &i)| v - o + i)
            .collect()
    };
    let mut current = contingency_chi2(counts, totals);
    for _ in 0..10 * n {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in a + 1..n {
                let (fa, fb) = (fold_of[a], fold_of[b]);
                if fa == fb || profile[a] == profile[b] {
                    continue;
                }
                let mut trial = counts.to_vec();
                trial[fa] = moved(&counts[fa], &profile[a], &profile[b]);
                trial[fb] = moved(&counts[fb], &profile[b], &profile[a]);
                let chi = contingency_chi2(&trial, totals);
                if chi < current - 1e-12 && best.is_none_or(|(c, _, _)| chi < c) {
                    best = Some((chi, a, b));
                }
            }
        }
        let Some((chi, a, b)) = best else { return };
        let (fa, fb) = (fold_of[a], fold_of[b]);
        counts[fa] = moved(&counts[fa], &profile[a], &profile[b]);
        counts[fb] = moved(&counts[fb], &profile[b], &profile[a]);
        fold_of.swap(a, b);
        current = chi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, AnnotationEvent, SynthSpec};
    use proptest::prelude::*;

    fn track(id: &str, calls: &[&str]) -> AnnotationTrack {
        let events = calls
            .iter()
            .enumerate()
            .map(|(i, c)| AnnotationEvent::new(i as f64 * 5.0, i as f64 * 5.0 + 2.0, *c))
            .collect();
        AnnotationTrack {
            recording_id: id.into(),
            events,
        }
    }

    #[test]
    fn identical_profiles_split_evenly() {
        let tracks: Vec<_> = (0..10)
            .map(|i| track(&format!("r{i}"), &["rumble", "rumble", "roar"]))
            .collect();
        let plan = make_folds(&tracks, 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2; 5]);
        for c in &plan.counts {
            assert_eq!(c["rumble"], 4);
            assert_eq!(c["roar"], 2);
        }
    }

    #[test]
    fn single_class_sizes_differ_by_at_most_one() {
        let tracks: Vec<_> = (0..13)
            .map(|i| track(&format!("r{i}"), &vec!["rumble"; 1 + i % 4]))
            .collect();
        let plan = make_folds(&tracks, 5, 3).unwrap();
        let s = plan.fold_sizes();
        assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
    }

    #[test]
    fn deterministic_and_flags_rare_classes() {
        let mut tracks: Vec<_> = (0..6)
            .map(|i| track(&format!("r{i}"), &["rumble"]))
            .collect();
        tracks[0] = track("r0", &["rumble", "trumpet"]);
        let a = make_folds(&tracks, 3, 9).unwrap();
        assert_eq!(a, make_folds(&tracks, 3, 9).unwrap());
        assert_eq!(a.excluded, vec!["trumpet".to_string()]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let tracks: Vec<_> = (0..3)
            .map(|i| track(&format!("r{i}"), &["rumble"]))
            .collect();
        assert!(matches!(
            make_folds(&tracks, 5, 0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(make_folds(&tracks, 1, 0), Err(Error::Config(_))));
        let dup = vec![track("a", &[]), track("a", &[]), track("b", &[])];
        assert!(make_folds(&dup, 2, 0).is_err());
    }

    #[test]
    fn default_corpus_is_stratified() {
        let (_, tracks) = synthesize_corpus(&SynthSpec::default()).unwrap();
        for seed in 0..8 {
            let plan = make_folds(&tracks, 5, seed).unwrap();
            let total: usize = plan.counts.iter().flat_map(|m| m.values()).sum();
            for c in &plan.classes {
                let share = plan.counts.iter().map(|m| m[c]).sum::<usize>() as f64 / total as f64;
                for (f, m) in plan.counts.iter().enumerate() {
                    let fold_total: usize = m.values().sum();
                    let p = m[c] as f64 / fold_total as f64;
                    let within_one = (m[c] as f64 - share * fold_total as f64).abs() <= 1.0;
                    assert!(
                        within_one || (p - share).abs() <= 0.25 * share,
                        "seed {seed} class {c} fold {f}: {p:.3} vs {share:.3}"
                    );
                }
            }
        }
    }

    #[test]
    fn plan_json_round_trips() {
        let tracks: Vec<_> = (0..6)
            .map(|i| track(&format!("r{i}"), &["rumble"]))
            .collect();
        let plan = make_folds(&tracks, 3, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.json");
        plan.write_json(&p).unwrap();
        assert_eq!(FoldPlan::read_json(&p).unwrap(), plan);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn no_recording_spans_folds(profiles in prop::collection::vec(prop::collection::vec(0usize..3, 0..6), 5..30), k in 2usize..6, seed: u64) {
            let names = ["rumble", "roar", "trumpet"];
            let tracks: Vec<_> = profiles.iter().enumerate().map(|(i, p)| {
                let calls: Vec<&str> = p.iter().map(|&c| names[c]).collect();
                track(&format!("r{i}"), &calls)
            }).collect();
            prop_assume!(tracks.len() >= k);
            let plan = make_folds(&tracks, k, seed).unwrap();
            prop_assert_eq!(plan.assignment.len(), tracks.len());
            let members: Vec<Vec<String>> = (0..k).map(|f| plan.members(f)).collect();
            let total: usize = members.iter().map(|m| m.len()).sum();
            prop_assert_eq!(total, tracks.len());
            for t in &tracks {
                prop_assert_eq!(members.iter().filter(|m| m.contains(&t.recording_id)).count(), 1);
            }
            prop_assert!(members.iter().all(|m| !m.is_empty()));
        }
    }
}
