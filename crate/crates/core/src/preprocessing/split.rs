use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::risk::RiskLevel;

pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

/// Stratified, seeded split of instance indices.
///
/// The training partition receives exactly `floor(N * ratio)` indices. Each
/// class contributes `floor(n_c * ratio)` of them; the leftover slots go to
/// the classes with the largest fractional remainders (lower class index on
/// ties). Within a class, members are chosen after a seeded shuffle. Both
/// returned lists are in shuffled order.
pub fn stratified_split(labels: &[RiskLevel], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::arg(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = labels.len();
    let n_train = (n as f64 * ratio).floor() as usize;

    let mut by_class: [Vec<usize>; RiskLevel::COUNT] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }

    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * ratio).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = quota.iter().sum();
    let mut order: Vec<usize> = (0..RiskLevel::COUNT).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    // Leftover slots; the first round avoids emptying a class's test share.
    let mut remaining = n_train.saturating_sub(assigned);
    for keep_one in [true, false] {
        for &c in &order {
            let cap = by_class[c].len() - usize::from(keep_one && !by_class[c].is_empty());
            while remaining > 0 && quota[c] < cap {
                quota[c] += 1;
                remaining -= 1;
                if keep_one {
                    break;
                }
            }
        }
    }

    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if quota[c] == 0 || quota[c] == members.len() {
            return Err(Error::InsufficientData(format!(
                "class {} has {} instance(s); each partition needs at least one",
                RiskLevel::from_index(c).unwrap(),
                members.len()
            )));
        }
    }

    let root = Rng::new(seed);
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        root.child(c as u64).shuffle(&mut shuffled);
        train.extend_from_slice(&shuffled[..quota[c]]);
        test.extend_from_slice(&shuffled[quota[c]..]);
    }
    root.child(100).shuffle(&mut train);
    root.child(101).shuffle(&mut test);
    Ok((train, test))
}

/// Splits `items` by the indices returned from [`stratified_split`].
pub fn split_dataset<T: Clone>(
    items: &[T],
    label_of: impl Fn(&T) -> RiskLevel,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    let labels: Vec<RiskLevel> = items.iter().map(&label_of).collect();
    let (train, test) = stratified_split(&labels, ratio, seed)?;
    Ok((
        train.into_iter().map(|i| items[i].clone()).collect(),
        test.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

pub fn class_proportions(labels: impl IntoIterator<Item = RiskLevel>) -> [f64; RiskLevel::COUNT] {
    let mut counts = [0usize; RiskLevel::COUNT];
    let mut n = 0usize;
    for l in labels {
        counts[l.index()] += 1;
        n += 1;
    }
    counts.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
}
