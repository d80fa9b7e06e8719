//! Calibration, ROC/AUC and ranking metrics.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::purchases::QuadrantView;
use crate::rng;
use crate::training::{CustomerBank, FdnaTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBin {
    pub mean_predicted: f64,
    pub empirical_rate: f64,
    pub count: usize,
    pub positives: usize,
}

impl CalibrationBin {
    /// Binomial standard deviation of the empirical rate under the mean prediction.
    pub fn binomial_sd(&self) -> f64 {
        (self.mean_predicted * (1.0 - self.mean_predicted) / self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub sample_size: usize,
    pub bin_count: usize,
}

impl CalibrationReport {
    pub fn positive_rate(&self) -> f64 {
        self.bins.iter().map(|b| b.positives).sum::<usize>() as f64 / self.sample_size as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin\tmean_p\tempirical_rate\tcount\n");
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(out, "{i}\t{:e}\t{:e}\t{}", b.mean_predicted, b.empirical_rate, b.count).unwrap();
        }
        out
    }
}

/// Sorts pairs by predicted probability into `bin_count` bins of equal size (±1).
pub fn calibrate(probabilities: &[f64], labels: &[bool], bin_count: usize) -> Result<CalibrationReport> {
    check_dim("labels", probabilities.len(), labels.len())?;
    let n = probabilities.len();
    if n == 0 {
        return Err(Error::invalid("calibration needs at least one pair"));
    }
    if bin_count == 0 || bin_count > n {
        return Err(Error::invalid(format!("bin count {bin_count} must be in 1..={n}")));
    }
    if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.par_sort_by(|&a, &b| probabilities[a].total_cmp(&probabilities[b]).then(a.cmp(&b)));
    let bins = (0..bin_count)
        .map(|b| {
            let members = &order[b * n / bin_count..(b + 1) * n / bin_count];
            let positives = members.iter().filter(|&&i| labels[i]).count();
            let count = members.len();
            CalibrationBin {
                mean_predicted: members.iter().map(|&i| probabilities[i]).sum::<f64>() / count as f64,
                empirical_rate: positives as f64 / count as f64,
                count,
                positives,
            }
        })
        .collect();
    Ok(CalibrationReport {
        bins,
        sample_size: n,
        bin_count,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), from the highest threshold down.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("fpr\ttpr\n");
        for (x, y) in &self.points {
            writeln!(out, "{x}\t{y}").unwrap();
        }
        out
    }
}

/// ROC curve and Mann–Whitney AUC with half credit for ties.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_dim("labels", scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("score is NaN"));
    }
    let pos = labels.iter().filter(|&&y| y).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "AUC undefined with {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.par_sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    // twice the Mann–Whitney count, kept integral so ties are exact
    let mut numerator: u128 = 0;
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut start = 0;
    while start < order.len() {
        let s = scores[order[start]];
        let mut end = start;
        let (mut gp, mut gn) = (0u128, 0u128);
        while end < order.len() && scores[order[end]] == s {
            if labels[order[end]] {
                gp += 1;
            } else {
                gn += 1;
            }
            end += 1;
        }
        numerator += gn * (2 * tp + gp);
        tp += gp;
        fp += gn;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        start = end;
    }
    Ok(RocCurve {
        points,
        auc: numerator as f64 / (2 * pos * neg) as f64,
    })
}

/// AUC only; see [`roc_auc`].
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    roc_auc(scores, labels).map(|c| c.auc)
}

/// Scores item/customer pairs with an fDNA table and a customer bank.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub fdna: &'a FdnaTable,
    pub bank: &'a CustomerBank,
}

impl<'a> Scorer<'a> {
    pub fn new(fdna: &'a FdnaTable, bank: &'a CustomerBank) -> Result<Self> {
        check_dim("bank dimension", fdna.dim(), bank.dim())?;
        Ok(Scorer { fdna, bank })
    }

    fn rows(&self, customers: &[usize]) -> Result<Vec<usize>> {
        customers
            .iter()
            .map(|&j| {
                self.bank
                    .row_of(j)
                    .ok_or_else(|| Error::invalid(format!("no customer bank entry for customer {j}")))
            })
            .collect()
    }

    /// Logit `f_i · w_j + b_j` for a bank row.
    pub fn logit(&self, item: usize, row: usize) -> f64 {
        self.bank.logit(row, self.fdna.row(item))
    }

    pub fn probability(&self, item: usize, row: usize) -> f64 {
        crate::training::sigmoid(self.logit(item, row))
    }
}

/// Uniform (item, customer) pairs with replacement from a quadrant.
pub fn sample_pairs(view: &QuadrantView<'_>, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let (items, customers) = (view.items(), view.customers());
    if items.is_empty() || customers.is_empty() {
        return Vec::new();
    }
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| (items[r.random_range(0..items.len())], customers[r.random_range(0..customers.len())]))
        .collect()
}

/// Scores and labels for the given pairs; scores are logits.
pub fn score_pairs(scorer: &Scorer<'_>, view: &QuadrantView<'_>, pairs: &[(usize, usize)]) -> Result<(Vec<f64>, Vec<bool>)> {
    let customers: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let rows = scorer.rows(&customers)?;
    Ok(pairs
        .par_iter()
        .zip(rows)
        .map(|(&(i, j), r)| (scorer.logit(i, r), view.matrix.contains(i, j)))
        .unzip())
}

/// Logits and labels of every pair of a quadrant, item-major.
pub fn score_quadrant(scorer: &Scorer<'_>, view: &QuadrantView<'_>) -> Result<(Vec<f64>, Vec<bool>)> {
    let customers = view.customers();
    let rows = scorer.rows(customers)?;
    let per_item: Vec<(Vec<f64>, Vec<bool>)> = view
        .items()
        .par_iter()
        .map(|&i| {
            customers
                .iter()
                .zip(&rows)
                .map(|(&j, &r)| (scorer.logit(i, r), view.matrix.contains(i, j)))
                .unzip()
        })
        .collect();
    let mut scores = Vec::with_capacity(view.items().len() * customers.len());
    let mut labels = Vec::with_capacity(scores.capacity());
    for (s, l) in per_item {
        scores.extend(s);
        labels.extend(l);
    }
    Ok((scores, labels))
}

/// AUC over every pair of the quadrant, or over `pair_sample` uniform pairs.
pub fn quadrant_auc(scorer: &Scorer<'_>, view: &QuadrantView<'_>, pair_sample: Option<usize>, seed: u64) -> Result<f64> {
    let (scores, labels) = match pair_sample {
        None => score_quadrant(scorer, view)?,
        Some(n) => score_pairs(scorer, view, &sample_pairs(view, n, seed))?,
    };
    auc(&scores, &labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerCustomerAuc {
    /// (customer, AUC over training items, AUC over validation items)
    pub pairs: Vec<(usize, f64, f64)>,
    /// Customers without a purchase (or without a non-purchase) in either item set.
    pub skipped: usize,
}

/// Per-customer AUC over the training items and over the validation items, for
/// every customer of `train_view` (which fixes the customer side); `val_view`
/// must share the customer set.
pub fn per_customer_auc_pairs(
    scorer: &Scorer<'_>,
    train_view: &QuadrantView<'_>,
    val_view: &QuadrantView<'_>,
) -> Result<PerCustomerAuc> {
    if train_view.customers() != val_view.customers() {
        return Err(Error::invalid("per-customer AUC needs two views over the same customers"));
    }
    let customers = train_view.customers();
    let rows = scorer.rows(customers)?;
    let one = |view: &QuadrantView<'_>, j: usize, r: usize| -> Option<f64> {
        let (s, l): (Vec<f64>, Vec<bool>) = view
            .items()
            .iter()
            .map(|&i| (scorer.logit(i, r), view.matrix.contains(i, j)))
            .unzip();
        auc(&s, &l).ok()
    };
    let results: Vec<Option<(usize, f64, f64)>> = customers
        .par_iter()
        .zip(&rows)
        .map(|(&j, &r)| Some((j, one(train_view, j, r)?, one(val_view, j, r)?)))
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    Ok(PerCustomerAuc {
        pairs: results.into_iter().flatten().collect(),
        skipped,
    })
}

/// Squared sample Pearson correlation.
pub fn pearson_r2(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("pearson inputs", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::invalid("pearson correlation needs at least 2 points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson correlation undefined for zero variance"));
    }
    Ok((sxy * sxy / (sxx * syy)).min(1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("spearman inputs", x.len(), y.len())?;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("spearman correlation undefined for constant input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capture {
    pub hits: usize,
    pub purchases: usize,
}

impl Capture {
    pub fn fraction(&self) -> f64 {
        if self.purchases == 0 {
            0.0
        } else {
            self.hits as f64 / self.purchases as f64
        }
    }
}

/// Items of `view` ranked for one bank row, best first; ties by item index.
pub fn rank_items(scorer: &Scorer<'_>, items: &[usize], row: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = items.iter().map(|&i| (i, scorer.logit(i, row))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
}

/// Fraction of the quadrant's purchases that fall in each customer's top `k`
/// items of the quadrant.
pub fn top_k_capture(scorer: &Scorer<'_>, view: &QuadrantView<'_>, k: usize) -> Result<Capture> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let customers = view.customers();
    let rows = scorer.rows(customers)?;
    let mut bought: Vec<Vec<usize>> = vec![Vec::new(); view.matrix.n_customers()];
    for (i, j) in view.entries() {
        bought[j].push(i);
    }
    let per: Vec<(usize, usize)> = customers
        .par_iter()
        .zip(&rows)
        .map(|(&j, &r)| {
            if bought[j].is_empty() {
                return (0, 0);
            }
            let ranked = rank_items(scorer, view.items(), r);
            let hits = ranked.iter().take(k).filter(|(i, _)| bought[j].binary_search(i).is_ok()).count();
            (hits, bought[j].len())
        })
        .collect();
    Ok(Capture {
        hits: per.iter().map(|p| p.0).sum(),
        purchases: per.iter().map(|p| p.1).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::purchases::{PurchaseMatrix, Quadrant, QuadrantSplit};
    use proptest::prelude::*;

    fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
        let mut num = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (a, &ya) in s.iter().zip(y) {
            if ya {
                p += 1;
            } else {
                n += 1;
            }
            if !ya {
                continue;
            }
            for (b, &yb) in s.iter().zip(y) {
                if !yb {
                    num += if a > b { 2 } else if a == b { 1 } else { 0 };
                }
            }
        }
        num as f64 / (2 * p * n) as f64
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.4, 0.3];
        let y = [true, false, true, false];
        assert_eq!(auc(&s, &y).unwrap(), 0.75);
        assert_eq!(auc(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 1.0], &[true, false]).unwrap(), 0.5);
        assert!(auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(auc(&[f64::NAN, 2.0], &[true, false]).is_err());
    }

    #[test]
    fn uninformative_scores_give_half() {
        let mut r = rng::rng(3);
        let s: Vec<f64> = (0..20000).map(|_| r.random()).collect();
        let y: Vec<bool> = (0..20000).map(|_| r.random::<f64>() < 0.3).collect();
        assert!((auc(&s, &y).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn roc_points_for_hand_example() {
        let c = roc_auc(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]).unwrap();
        assert_eq!(c.points, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn calibration_examples() {
        let mut r = rng::rng(5);
        let n = 100_000;
        let p = vec![0.3; n];
        let y: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.3).collect();
        let rep = calibrate(&p, &y, 20).unwrap();
        for b in &rep.bins {
            assert!((b.empirical_rate - 0.3).abs() <= 4.0 * b.binomial_sd());
        }
        let one = calibrate(&p, &y, 1).unwrap();
        assert_eq!(one.bins[0].empirical_rate, y.iter().filter(|&&v| v).count() as f64 / n as f64);
        assert!(calibrate(&p[..3], &y[..3], 4).is_err());
        assert!(calibrate(&[], &[], 1).is_err());
        assert!(calibrate(&[1.5], &[true], 1).is_err());
    }

    #[test]
    fn calibrated_oracle_stays_within_noise() {
        let mut r = rng::rng(6);
        let n = 200_000;
        let p: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 0.2).collect();
        let y: Vec<bool> = p.iter().map(|&q| r.random::<f64>() < q).collect();
        let rep = calibrate(&p, &y, 50).unwrap();
        let inside = rep
            .bins
            .iter()
            .filter(|b| (b.empirical_rate - b.mean_predicted).abs() <= 4.0 * b.binomial_sd())
            .count();
        assert!(inside >= 48);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r2(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson_r2(&[1.0, 2.0, 3.0], &[1.0, -2.0, 1.0]).unwrap(), 0.0);
        assert!((pearson_r2(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!(pearson_r2(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson_r2(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    /// Two customers over four items, fDNA = item index along one axis.
    fn ranking_fixture() -> (PurchaseMatrix, QuadrantSplit, FdnaTable, CustomerBank) {
        let ids = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        // customer 0 likes high index, customer 1 likes low index
        let m = PurchaseMatrix::from_pairs(ids("i", 6), ids("c", 2), [(3, 0), (1, 0), (0, 1), (4, 0), (5, 1)])
            .unwrap()
            .0;
        let s = QuadrantSplit::new(6, 2, vec![0, 1, 3], vec![2, 4, 5], vec![0, 1], vec![]).unwrap();
        let fdna = FdnaTable::from_rows(&(0..6).map(|i| vec![i as f64]).collect::<Vec<_>>()).unwrap();
        let bank = CustomerBank::from_parts(vec![0, 1], 1, vec![1.0, -1.0], vec![0.0, 0.0]).unwrap();
        (m, s, fdna, bank)
    }

    #[test]
    fn per_customer_pairs_by_hand() {
        let (m, s, fdna, bank) = ranking_fixture();
        let sc = Scorer::new(&fdna, &bank).unwrap();
        let r = per_customer_auc_pairs(&sc, &s.view(&m, Quadrant::TT), &s.view(&m, Quadrant::VT)).unwrap();
        // customer 0: train items 0,1,3 scored 0,1,3; bought 1,3 -> (1 > 0, 3 > 0) = 1.0
        //             val items 2,4,5 scored 2,4,5; bought 4 -> beats 2, loses to 5 = 0.5
        // customer 1: train scored 0,-1,-3; bought 0 -> 1.0
        //             val scored -2,-4,-5; bought 5 -> 0.0
        assert_eq!(r.pairs, vec![(0, 1.0, 0.5), (1, 1.0, 0.0)]);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn customers_without_positives_are_skipped() {
        let (m, s, fdna, bank) = ranking_fixture();
        let sc = Scorer::new(&fdna, &bank).unwrap();
        let s2 = QuadrantSplit::new(6, 2, vec![0, 1, 2], vec![3, 4, 5], vec![0, 1], vec![]).unwrap();
        let r = per_customer_auc_pairs(&sc, &s2.view(&m, Quadrant::TT), &s2.view(&m, Quadrant::VT)).unwrap();
        // customer 1 buys item 0 (train) and 5 (val); customer 0 buys 1 (train) and 3, 4 (val)
        assert_eq!(r.skipped, 0);
        let s3 = QuadrantSplit::new(6, 2, vec![2, 3, 4], vec![0, 1, 5], vec![0, 1], vec![]).unwrap();
        let r = per_customer_auc_pairs(&sc, &s3.view(&m, Quadrant::TT), &s3.view(&m, Quadrant::VT)).unwrap();
        // customer 1 has no training-item purchase
        assert_eq!(r.skipped, 1);
        let _ = s;
    }

    #[test]
    fn capture_examples() {
        let (m, s, fdna, bank) = ranking_fixture();
        let sc = Scorer::new(&fdna, &bank).unwrap();
        let view = s.view(&m, Quadrant::VT);
        let all = top_k_capture(&sc, &view, 3).unwrap();
        assert_eq!(all, Capture { hits: 2, purchases: 2 });
        assert_eq!(all.fraction(), 1.0);
        // customer 0's top val item is 5 (not bought), customer 1's is 2 (not bought)
        assert_eq!(top_k_capture(&sc, &view, 1).unwrap().hits, 0);
        // single-purchase customer whose purchase is top ranked
        let tt = s.view(&m, Quadrant::TT);
        let c = top_k_capture(&sc, &tt, 1).unwrap();
        assert_eq!(c, Capture { hits: 2, purchases: 3 });
        assert!(top_k_capture(&sc, &view, 0).is_err());
    }

    #[test]
    fn missing_bank_is_an_error() {
        let (m, s, fdna, _) = ranking_fixture();
        let bank = CustomerBank::from_parts(vec![0], 1, vec![1.0], vec![0.0]).unwrap();
        let sc = Scorer::new(&fdna, &bank).unwrap();
        assert!(quadrant_auc(&sc, &s.view(&m, Quadrant::TT), None, 0).is_err());
    }

    #[test]
    fn sampled_quadrant_auc_is_deterministic() {
        let (m, s, fdna, bank) = ranking_fixture();
        let sc = Scorer::new(&fdna, &bank).unwrap();
        let v = s.view(&m, Quadrant::TT);
        let a = quadrant_auc(&sc, &v, Some(500), 4).unwrap();
        assert_eq!(a, quadrant_auc(&sc, &v, Some(500), 4).unwrap());
        // pooled positives 1, 3, 0 against negatives 0, -1, -3: one tie
        assert_eq!(quadrant_auc(&sc, &v, None, 0).unwrap(), 17.0 / 18.0);
    }

    fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        prop::collection::vec((0u8..12, any::<bool>()), 2..200)
            .prop_map(|v| v.into_iter().map(|(s, y)| (s as f64 / 4.0, y)).unzip())
            .prop_filter("both classes", |(_, y): &(Vec<f64>, Vec<bool>)| y.iter().any(|&v| v) && y.iter().any(|&v| !v))
    }

    proptest! {
        #[test]
        fn sort_auc_equals_brute_force((s, y) in labelled()) {
            prop_assert_eq!(auc(&s, &y).unwrap(), brute_auc(&s, &y));
        }

        #[test]
        fn roc_is_monotone_with_fixed_ends((s, y) in labelled()) {
            let c = roc_auc(&s, &y).unwrap();
            prop_assert_eq!(c.points[0], (0.0, 0.0));
            prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
            for w in c.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn auc_is_invariant_under_monotone_maps((s, y) in labelled(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
            let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
            prop_assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
        }

        #[test]
        fn calibration_bins_balance(
            (p, y) in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..500).prop_map(|v| v.into_iter().unzip::<f64, bool, Vec<f64>, Vec<bool>>()),
            bins in 1usize..40,
        ) {
            prop_assume!(bins <= p.len());
            let r = calibrate(&p, &y, bins).unwrap();
            let sizes: Vec<usize> = r.bins.iter().map(|b| b.count).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(sizes.iter().sum::<usize>(), p.len());
            let positives: usize = r.bins.iter().map(|b| b.positives).sum();
            prop_assert_eq!(positives, y.iter().filter(|&&v| v).count());
            for w in r.bins.windows(2) {
                prop_assert!(w[0].mean_predicted <= w[1].mean_predicted);
            }
        }
    }
}
