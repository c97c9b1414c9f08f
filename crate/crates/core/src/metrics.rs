//! CLEAR-MOT accuracy/precision, track coverage and identity F1.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::assignment::{solve_min_cost, solve_with_threshold, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::scalar::Scalar;

/// IoU needed for a ground-truth box and a hypothesis box to count as the same object.
pub const IOU_MATCH: f64 = 0.5;
/// Coverage fraction for mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Coverage fraction for mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;

/// Identified boxes of one frame. Used for both ground truth and hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame<T> {
    pub frame: u32,
    pub objects: Vec<(u32, BoundingBox<T>)>,
}

pub type HypothesisFrame<T> = GroundTruthFrame<T>;

impl<T: Scalar> GroundTruthFrame<T> {
    pub fn new(frame: u32, objects: Vec<(u32, BoundingBox<T>)>) -> Self {
        Self { frame, objects }
    }

    pub fn empty(frame: u32) -> Self {
        Self::new(frame, Vec::new())
    }

    fn check_unique(&self) -> Result<()> {
        let ids: BTreeSet<u32> = self.objects.iter().map(|o| o.0).collect();
        if ids.len() != self.objects.len() {
            return Err(Error::InvalidConfig(format!(
                "frame {} repeats an identity",
                self.frame
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(gt id, hyp id, IoU)`.
    pub pairs: Vec<(u32, u32, f64)>,
    pub false_positives: usize,
    pub misses: usize,
}

/// Per-frame correspondence. Pairs from `previous` (gt id → hyp id) survive when
/// their IoU is still at least 0.5; the rest go through a thresholded assignment on 1 − IoU.
pub fn match_frame<T: Scalar>(
    gt: &GroundTruthFrame<T>,
    hyp: &HypothesisFrame<T>,
    previous: &HashMap<u32, u32>,
) -> Result<FrameMatch> {
    if gt.frame != hyp.frame {
        return Err(Error::FrameMismatch {
            gt: gt.frame,
            hyp: hyp.frame,
        });
    }
    let mut gt_used = vec![false; gt.objects.len()];
    let mut hyp_used = vec![false; hyp.objects.len()];
    let mut pairs = Vec::new();
    for (gi, (gid, gbox)) in gt.objects.iter().enumerate() {
        let Some(&want) = previous.get(gid) else {
            continue;
        };
        if let Some(hi) = hyp.objects.iter().position(|h| h.0 == want) {
            let overlap = iou(gbox, &hyp.objects[hi].1).as_f64();
            if !hyp_used[hi] && overlap >= IOU_MATCH {
                gt_used[gi] = true;
                hyp_used[hi] = true;
                pairs.push((*gid, want, overlap));
            }
        }
    }
    let free_g: Vec<usize> = (0..gt.objects.len()).filter(|&i| !gt_used[i]).collect();
    let free_h: Vec<usize> = (0..hyp.objects.len()).filter(|&i| !hyp_used[i]).collect();
    if !free_g.is_empty() && !free_h.is_empty() {
        let costs = CostMatrix::from_fn(free_g.len(), free_h.len(), |r, c| {
            1.0 - iou(&gt.objects[free_g[r]].1, &hyp.objects[free_h[c]].1).as_f64()
        });
        for (r, c) in solve_with_threshold(&costs, 1.0 - IOU_MATCH).matches {
            let (gid, gbox) = &gt.objects[free_g[r]];
            let (hid, hbox) = &hyp.objects[free_h[c]];
            gt_used[free_g[r]] = true;
            hyp_used[free_h[c]] = true;
            pairs.push((*gid, *hid, iou(gbox, hbox).as_f64()));
        }
    }
    pairs.sort_by_key(|p| p.0);
    Ok(FrameMatch {
        pairs,
        false_positives: hyp_used.iter().filter(|u| !**u).count(),
        misses: gt_used.iter().filter(|u| !**u).count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearMot {
    pub mota: f64,
    pub motp: f64,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub matches: usize,
    pub gt_total: usize,
    /// Fraction of gt identities covered on at least 80% of their frames.
    pub mt: f64,
    /// Fraction covered on at most 20%.
    pub ml: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdScores {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Everything reported by the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub idf1: f64,
    pub mota: f64,
    pub motp: f64,
    pub mt: f64,
    pub ml: f64,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub gt_total: usize,
    pub idtp: usize,
}

/// Pairs ground-truth and hypothesis frames by frame number. Hypothesis frames past the
/// end of the ground truth, or repeated frame numbers, are rejected.
fn align<'a, T: Scalar>(
    gt: &'a [GroundTruthFrame<T>],
    hyp: &'a [HypothesisFrame<T>],
) -> Result<Vec<(GroundTruthFrame<T>, HypothesisFrame<T>)>> {
    let mut g: BTreeMap<u32, &GroundTruthFrame<T>> = BTreeMap::new();
    for f in gt {
        f.check_unique()?;
        if g.insert(f.frame, f).is_some() {
            return Err(Error::InvalidConfig(format!("ground truth repeats frame {}", f.frame)));
        }
    }
    let mut h: BTreeMap<u32, &HypothesisFrame<T>> = BTreeMap::new();
    for f in hyp {
        f.check_unique()?;
        if h.insert(f.frame, f).is_some() {
            return Err(Error::InvalidConfig(format!("hypothesis repeats frame {}", f.frame)));
        }
    }
    let last_gt = g.keys().next_back().copied().unwrap_or(0);
    if let Some(&last_h) = h.keys().next_back() {
        if last_h > last_gt {
            return Err(Error::FrameMismatch {
                gt: last_gt,
                hyp: last_h,
            });
        }
    }
    let frames: BTreeSet<u32> = g.keys().chain(h.keys()).copied().collect();
    Ok(frames
        .into_iter()
        .map(|f| {
            let gf = g.get(&f).map(|x| (*x).clone()).unwrap_or_else(|| GroundTruthFrame::empty(f));
            let hf = h.get(&f).map(|x| (*x).clone()).unwrap_or_else(|| GroundTruthFrame::empty(f));
            (gf, hf)
        })
        .collect())
}

pub fn clear_mot<T: Scalar>(gt: &[GroundTruthFrame<T>], hyp: &[HypothesisFrame<T>]) -> Result<ClearMot> {
    let frames = align(gt, hyp)?;
    let gt_total: usize = frames.iter().map(|(g, _)| g.objects.len()).sum();
    if gt_total == 0 {
        return Err(Error::Undefined("MOTA is undefined without ground-truth boxes"));
    }
    let mut last: HashMap<u32, u32> = HashMap::new();
    let (mut fp, mut fn_, mut ids) = (0, 0, 0);
    let mut iou_sum = 0.0;
    let mut n_matches = 0;
    let mut span: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (g, h) in &frames {
        let m = match_frame(g, h, &last)?;
        fp += m.false_positives;
        fn_ += m.misses;
        for (gid, _) in &g.objects {
            span.entry(*gid).or_default().0 += 1;
        }
        for &(gid, hid, overlap) in &m.pairs {
            if last.get(&gid).is_some_and(|&prev| prev != hid) {
                ids += 1;
            }
            last.insert(gid, hid);
            iou_sum += overlap;
            n_matches += 1;
            span.entry(gid).or_default().1 += 1;
        }
    }
    let n_ids = span.len() as f64;
    let coverage = |pred: &dyn Fn(f64) -> bool| {
        span.values().filter(|(t, c)| pred(*c as f64 / *t as f64)).count() as f64 / n_ids
    };
    Ok(ClearMot {
        mota: 1.0 - (fp + fn_ + ids) as f64 / gt_total as f64,
        motp: if n_matches == 0 { 0.0 } else { iou_sum / n_matches as f64 },
        fp,
        fn_,
        ids,
        matches: n_matches,
        gt_total,
        mt: coverage(&|r| r >= MOSTLY_TRACKED),
        ml: coverage(&|r| r <= MOSTLY_LOST),
    })
}

/// Identity F1 under the best one-to-one pairing of gt and hypothesis identities.
pub fn idf1<T: Scalar>(gt: &[GroundTruthFrame<T>], hyp: &[HypothesisFrame<T>]) -> Result<IdScores> {
    let frames = align(gt, hyp)?;
    let gt_total: usize = frames.iter().map(|(g, _)| g.objects.len()).sum();
    let hyp_total: usize = frames.iter().map(|(_, h)| h.objects.len()).sum();
    if gt_total == 0 {
        return Err(Error::Undefined("IDF1 is undefined without ground-truth boxes"));
    }
    let gt_ids: Vec<u32> = frames
        .iter()
        .flat_map(|(g, _)| g.objects.iter().map(|o| o.0))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let hyp_ids: Vec<u32> = frames
        .iter()
        .flat_map(|(_, h)| h.objects.iter().map(|o| o.0))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let gi: HashMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let hi: HashMap<u32, usize> = hyp_ids.iter().enumerate().map(|(i, &h)| (h, i)).collect();
    let mut overlap = vec![vec![0usize; hyp_ids.len()]; gt_ids.len()];
    for (g, h) in &frames {
        for (gid, gbox) in &g.objects {
            for (hid, hbox) in &h.objects {
                if iou(gbox, hbox).as_f64() >= IOU_MATCH {
                    overlap[gi[gid]][hi[hid]] += 1;
                }
            }
        }
    }
    let idtp = if hyp_ids.is_empty() {
        0
    } else {
        // Every pair stays feasible so the matching is free to leave identities idle.
        let max = overlap.iter().flatten().copied().max().unwrap_or(0) as f64;
        let costs = CostMatrix::from_fn(gt_ids.len(), hyp_ids.len(), |r, c| max - overlap[r][c] as f64);
        solve_min_cost(&costs)
            .matches
            .iter()
            .map(|&(r, c)| overlap[r][c])
            .sum()
    };
    let idfp = hyp_total - idtp;
    let idfn = gt_total - idtp;
    Ok(IdScores {
        idf1: 2.0 * idtp as f64 / (2 * idtp + idfp + idfn) as f64,
        idtp,
        idfp,
        idfn,
    })
}

pub fn evaluate<T: Scalar>(gt: &[GroundTruthFrame<T>], hyp: &[HypothesisFrame<T>]) -> Result<EvalResult> {
    let c = clear_mot(gt, hyp)?;
    let i = idf1(gt, hyp)?;
    Ok(EvalResult {
        idf1: i.idf1,
        mota: c.mota,
        motp: c.motp,
        mt: c.mt,
        ml: c.ml,
        fp: c.fp,
        fn_: c.fn_,
        ids: c.ids,
        gt_total: c.gt_total,
        idtp: i.idtp,
    })
}
