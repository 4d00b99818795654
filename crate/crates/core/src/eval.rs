//! Latent-space studies and the statistics they report.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::brdf::{lerp_material, MaterialFull};
use crate::error::{Error, Result};
use crate::metric::ImageMetric;
use crate::predict::Predictor;
use crate::provider::EmbeddingProvider;
use crate::render::{render_sphere, ImageBuffer, RenderConfig};

const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Sample correlation and its two-sided p-value from the t-test with
/// `n - 2` degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientPairs { needed: 3, have: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let r = (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        student_t_two_sided(r * libm::sqrt(df / (1.0 - r * r)), df)
    };
    Ok((r, p))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys))?.0)
}

/// Word to dense vector map with a uniform dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Adds a word, stored lowercase. Later duplicates replace earlier ones.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::InvalidConfig(alloc::format!("bad word {word:?}")));
        }
        self.vectors.insert(word.to_lowercase(), vector);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// Words in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(1.0 - (dot / libm::sqrt(na * nb)).clamp(-1.0, 1.0))
}

/// Cosine distance between two words of `table`.
pub fn word_distance(table: &WordVectorTable, a: &str, b: &str) -> Result<f64> {
    let va = table.get(a).ok_or_else(|| Error::MissingWord(a.into()))?;
    let vb = table.get(b).ok_or_else(|| Error::MissingWord(b.into()))?;
    cosine_distance(va, vb).ok_or(Error::ZeroNorm)
}

fn excluded(word: &str, candidate: &str, excludes: &BTreeMap<String, Vec<String>>) -> bool {
    candidate == word
        || excludes
            .get(word)
            .is_some_and(|l| l.iter().any(|w| w == candidate))
        || excludes
            .get(candidate)
            .is_some_and(|l| l.iter().any(|w| w == word))
}

/// The `k` nearest words by cosine distance, excluding the word itself and
/// its listed antonyms (in either direction). Ties go to the
/// lexicographically smaller word; zero vectors are never neighbours.
pub fn w2v_neighbors(
    word: &str,
    table: &WordVectorTable,
    k: usize,
    excludes: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<(String, f64)>> {
    let query = table
        .get(word)
        .ok_or_else(|| Error::MissingWord(word.into()))?;
    if query.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroNorm);
    }
    let mut found: Vec<(String, f64)> = table
        .iter()
        .filter(|(w, _)| !excluded(word, w, excludes))
        .filter_map(|(w, v)| cosine_distance(query, v).map(|d| (String::from(w), d)))
        .collect();
    found.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    found.truncate(k);
    Ok(found)
}

/// One compared prompt pair of the word-vector study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPair {
    pub adjective: String,
    pub neighbor: String,
    pub noun: String,
    /// Cosine distance between the adjectives.
    pub x: f64,
    /// Image distance between the renders of the two predictions.
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub pairs: Vec<StudyPair>,
    pub r: f64,
    pub p: f64,
    /// Adjectives missing from the word-vector table.
    pub skipped: Vec<String>,
}

impl StudyReport {
    /// `x,y` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.pairs {
            let _ = writeln!(s, "{},{}", p.x, p.y);
        }
        s
    }

    /// Rows with the prompt words attached.
    pub fn to_detailed_csv(&self) -> String {
        let mut s = String::from("adjective,neighbor,noun,x,y\n");
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.adjective, p.neighbor, p.noun, p.x, p.y
            );
        }
        s
    }
}

/// Predictor, metric and render settings shared by the studies.
pub struct StudyContext<'a, P, M> {
    pub predictor: &'a Predictor<P>,
    pub metric: M,
    pub render: RenderConfig,
}

impl<P: EmbeddingProvider, M: ImageMetric> StudyContext<'_, P, M> {
    fn render(&self, m: &MaterialFull) -> Result<ImageBuffer> {
        render_sphere(m, &self.render)
    }

    fn cached_render<'c>(
        &self,
        cache: &'c mut BTreeMap<String, ImageBuffer>,
        prompt: &str,
    ) -> Result<&'c ImageBuffer> {
        if !cache.contains_key(prompt) {
            let m = self.predictor.predict(prompt)?.material;
            let img = self.render(&m)?;
            cache.insert(prompt.into(), img);
        }
        Ok(&cache[prompt])
    }

    /// Metric distance between the renders of two predicted prompts.
    pub fn prompt_distance(&self, a: &str, b: &str) -> Result<f64> {
        let ia = self.render(&self.predictor.predict(a)?.material)?;
        let ib = self.render(&self.predictor.predict(b)?.material)?;
        self.metric.distance(&ia, &ib)
    }
}

/// For every adjective, its `k` word-vector neighbours and every noun: the
/// word distance of the adjectives against the image distance between the
/// predicted renders of `"adjective noun"` and `"neighbor noun"`.
pub fn w2v_perceptual_study<P: EmbeddingProvider, M: ImageMetric>(
    ctx: &StudyContext<'_, P, M>,
    adjectives: &[String],
    nouns: &[String],
    table: &WordVectorTable,
    excludes: &BTreeMap<String, Vec<String>>,
    k: usize,
) -> Result<StudyReport> {
    let mut cache = BTreeMap::new();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for adjective in adjectives {
        let neighbors = match w2v_neighbors(adjective, table, k, excludes) {
            Ok(n) => n,
            Err(Error::MissingWord(w)) => {
                skipped.push(w);
                continue;
            }
            Err(e) => return Err(e),
        };
        for (neighbor, x) in neighbors {
            for noun in nouns {
                let a = alloc::format!("{adjective} {noun}");
                let b = alloc::format!("{neighbor} {noun}");
                let ia = ctx.cached_render(&mut cache, &a)?.clone();
                let ib = ctx.cached_render(&mut cache, &b)?;
                let y = ctx.metric.distance(&ia, ib)?;
                pairs.push(StudyPair {
                    adjective: adjective.clone(),
                    neighbor: neighbor.clone(),
                    noun: noun.clone(),
                    x,
                    y,
                });
            }
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.y).collect();
    let (r, p) = pearson(&xs, &ys)?;
    Ok(StudyReport {
        pairs,
        r,
        p,
        skipped,
    })
}

/// A material with the prompt it was annotated with.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub material: MaterialFull,
    pub prompt: String,
}

/// Uniform grid of `steps` values from 0 to 1 inclusive.
pub fn t_grid(steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::OutOfRange {
            what: "steps",
            value: steps as f64,
        });
    }
    Ok((0..steps).map(|i| i as f64 / (steps - 1) as f64).collect())
}

/// Mean distance (and standard error) per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl Curve {
    fn from_rows(t: Vec<f64>, rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let mut mean = alloc::vec![0.0; t.len()];
        let mut stderr = alloc::vec![0.0; t.len()];
        for (i, (m, s)) in mean.iter_mut().zip(stderr.iter_mut()).enumerate() {
            *m = rows.iter().map(|r| r[i]).sum::<f64>() / n;
            if rows.len() > 1 {
                let var = rows.iter().map(|r| (r[i] - *m) * (r[i] - *m)).sum::<f64>() / (n - 1.0);
                *s = libm::sqrt(var / n);
            }
        }
        Curve { t, mean, stderr }
    }

    /// `t,mean_distance,stderr` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean_distance,stderr\n");
        for i in 0..self.t.len() {
            let _ = writeln!(s, "{},{},{}", self.t[i], self.mean[i], self.stderr[i]);
        }
        s
    }

    /// Spearman correlation of distance against `t`.
    pub fn trend(&self) -> Result<f64> {
        spearman(&self.t, &self.mean)
    }
}

/// Indices of `samples` ground-truth pairs with distinct prompts.
pub fn draw_pairs(gt: &[GroundTruth], samples: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let distinct = gt.iter().any(|g| g.prompt != gt[0].prompt);
    if gt.len() < 2 || !distinct {
        return Err(Error::InsufficientPairs {
            needed: 2,
            have: if distinct { gt.len() } else { gt.len().min(1) },
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    while out.len() < samples {
        let a = rng.random_range(0..gt.len());
        let b = rng.random_range(0..gt.len());
        if gt[a].prompt != gt[b].prompt {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Distance between the interpolated ground truths and the interpolated
/// predictions of their prompts, averaged over the sampled pairs.
pub fn interpolation_study_paired<P: EmbeddingProvider, M: ImageMetric>(
    ctx: &StudyContext<'_, P, M>,
    gt: &[GroundTruth],
    pairs: &[(usize, usize)],
    steps: usize,
) -> Result<Curve> {
    let t = t_grid(steps)?;
    let mut rows = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let pa = ctx.predictor.predict(&gt[a].prompt)?.material;
        let pb = ctx.predictor.predict(&gt[b].prompt)?.material;
        let mut row = Vec::with_capacity(t.len());
        for &ti in &t {
            let g = ctx.render(&lerp_material(&gt[a].material, &gt[b].material, ti)?)?;
            let p = ctx.render(&lerp_material(&pa, &pb, ti)?)?;
            row.push(ctx.metric.distance(&g, &p)?);
        }
        rows.push(row);
    }
    Ok(Curve::from_rows(t, &rows))
}

/// Distance from the interpolated predictions to the fixed renders of the
/// first and the second ground truth.
pub fn interpolation_study_fixed<P: EmbeddingProvider, M: ImageMetric>(
    ctx: &StudyContext<'_, P, M>,
    gt: &[GroundTruth],
    pairs: &[(usize, usize)],
    steps: usize,
) -> Result<(Curve, Curve)> {
    let t = t_grid(steps)?;
    let mut rows_a = Vec::with_capacity(pairs.len());
    let mut rows_b = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let pa = ctx.predictor.predict(&gt[a].prompt)?.material;
        let pb = ctx.predictor.predict(&gt[b].prompt)?.material;
        let ga = ctx.render(&gt[a].material)?;
        let gb = ctx.render(&gt[b].material)?;
        let mut ra = Vec::with_capacity(t.len());
        let mut rb = Vec::with_capacity(t.len());
        for &ti in &t {
            let p = ctx.render(&lerp_material(&pa, &pb, ti)?)?;
            ra.push(ctx.metric.distance(&p, &ga)?);
            rb.push(ctx.metric.distance(&p, &gb)?);
        }
        rows_a.push(ra);
        rows_b.push(rb);
    }
    Ok((
        Curve::from_rows(t.clone(), &rows_a),
        Curve::from_rows(t, &rows_b),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pearson_exact_lines() {
        let (r, p) = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!((r, p), (1.0, 0.0));
        let (r, _) = pearson(&[1.0, 2.0, 3.0, 4.0], &[-1.0, -2.0, -3.0, -4.0]).unwrap();
        assert_eq!(r, -1.0);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]).unwrap_err(),
            Error::InsufficientPairs { needed: 3, have: 2 }
        );
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err(),
            Error::DegenerateVariance
        );
        assert!(matches!(
            pearson(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn incomplete_beta_symmetry() {
        let v = regularized_incomplete_beta(2.5, 0.5, 0.3);
        let w = regularized_incomplete_beta(0.5, 2.5, 0.7);
        assert!((v + w - 1.0).abs() < 1e-14);
        // I_x(1, 1) = x
        assert!((regularized_incomplete_beta(1.0, 1.0, 0.37) - 0.37).abs() < 1e-14);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap(), 1.0);
    }

    #[test]
    fn neighbors_exclusions() {
        let mut t = WordVectorTable::new(2);
        t.insert("shiny", vec![1.0, 0.0]).unwrap();
        t.insert("dull", vec![0.99, 0.1]).unwrap();
        t.insert("glossy", vec![0.9, 0.2]).unwrap();
        let mut ex = BTreeMap::new();
        ex.insert("shiny".into(), vec!["dull".into()]);
        let n = w2v_neighbors("shiny", &t, 10, &ex).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].0, "glossy");
        // the reverse entry also excludes
        let n = w2v_neighbors("dull", &t, 10, &ex).unwrap();
        assert_eq!(
            n.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(),
            vec!["glossy"]
        );
        assert_eq!(
            w2v_neighbors("matte", &t, 3, &ex).unwrap_err(),
            Error::MissingWord("matte".into())
        );
    }

    #[test]
    fn neighbor_ties_are_lexicographic() {
        let mut t = WordVectorTable::new(2);
        t.insert("q", vec![1.0, 0.0]).unwrap();
        t.insert("b", vec![0.0, 1.0]).unwrap();
        t.insert("a", vec![0.0, 2.0]).unwrap();
        let n = w2v_neighbors("q", &t, 2, &BTreeMap::new()).unwrap();
        assert_eq!((n[0].0.as_str(), n[1].0.as_str()), ("a", "b"));
    }

    #[test]
    fn grid_and_pairs() {
        let g = t_grid(21).unwrap();
        assert_eq!((g[0], g[10], g[20]), (0.0, 0.5, 1.0));
        assert!(t_grid(1).is_err());
        let m = MaterialFull::default();
        let one = vec![
            GroundTruth {
                material: m,
                prompt: "a".into(),
            },
            GroundTruth {
                material: m,
                prompt: "a".into(),
            },
        ];
        assert!(matches!(
            draw_pairs(&one, 3, 0),
            Err(Error::InsufficientPairs { .. })
        ));
        let two = vec![
            GroundTruth {
                material: m,
                prompt: "a".into(),
            },
            GroundTruth {
                material: m,
                prompt: "b".into(),
            },
        ];
        let p = draw_pairs(&two, 5, 0).unwrap();
        assert!(p.iter().all(|&(a, b)| a != b));
        assert_eq!(p, draw_pairs(&two, 5, 0).unwrap());
    }
}
