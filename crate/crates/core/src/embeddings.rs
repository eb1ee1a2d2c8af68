//! Sentence vectors, cosine similarity, and exact per-language
//! nearest-neighbour retrieval.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::corpus::{Lang, ParallelPair};
use crate::par;
use crate::scorer::{BackendError, Scorer};
use crate::text::normalize;

/// Dimension of the offline embedder.
pub const FALLBACK_DIM: usize = 256;

/// A finite-valued dense vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        if values.is_empty() {
            return Err("empty embedding".into());
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(format!("non-finite component at {i}"));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity, 0 when either side has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, BackendError> {
    if a.dim() != b.dim() {
        return Err(BackendError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

/// Offline embedder: character trigrams of the normalised text hashed with
/// FNV-1a into 256 term-frequency buckets, then L2-normalised. Text shorter
/// than three characters is a single gram; empty text is the zero vector.
pub fn fallback_embed(text: &str) -> EmbeddingVector {
    let chars: Vec<char> = normalize(text).chars().collect();
    let mut v = vec![0.0; FALLBACK_DIM];
    if chars.is_empty() {
        return EmbeddingVector(v);
    }
    let mut buf = String::new();
    let mut add = |gram: &[char]| {
        buf.clear();
        buf.extend(gram);
        v[(fnv1a64(buf.as_bytes()) % FALLBACK_DIM as u64) as usize] += 1.0;
    };
    if chars.len() < 3 {
        add(&chars);
    } else {
        chars.windows(3).for_each(&mut add);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    EmbeddingVector(v)
}

/// Exact single-language neighbour index over toxic sides.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    pub lang: Lang,
    entries: Vec<(String, EmbeddingVector)>,
    positions: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub score: f64,
}

impl NeighborIndex {
    pub fn new(lang: Lang, entries: Vec<(String, EmbeddingVector)>) -> Result<Self, BackendError> {
        let mut positions = HashMap::with_capacity(entries.len());
        let dim = entries.first().map(|(_, v)| v.dim());
        for (i, (id, v)) in entries.iter().enumerate() {
            if let Some(d) = dim.filter(|&d| d != v.dim()) {
                return Err(BackendError::DimensionMismatch { expected: d, got: v.dim() });
            }
            if positions.insert(id.clone(), i).is_some() {
                return Err(BackendError::Protocol {
                    endpoint: "index".into(),
                    reason: format!("duplicate id {id:?} in {lang} index"),
                });
            }
        }
        Ok(NeighborIndex { lang, entries, positions })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.positions.get(id).map(|&i| &self.entries[i].1)
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }
}

/// Embeds every pair's toxic side and partitions the vectors by language.
pub fn build_index(pairs: &[ParallelPair], scorer: &dyn Scorer) -> Result<BTreeMap<Lang, NeighborIndex>, BackendError> {
    if pairs.is_empty() {
        return Ok(BTreeMap::new());
    }
    let texts: Vec<String> = pairs.iter().map(|p| p.toxic.clone()).collect();
    let vectors = scorer.embed(&texts)?;
    if vectors.len() != pairs.len() {
        return Err(BackendError::Protocol {
            endpoint: scorer.name().to_string(),
            reason: format!("expected {} vectors, got {}", pairs.len(), vectors.len()),
        });
    }
    let mut grouped: BTreeMap<Lang, Vec<(String, EmbeddingVector)>> = BTreeMap::new();
    for (p, v) in pairs.iter().zip(vectors) {
        grouped.entry(p.lang).or_default().push((p.id.clone(), v));
    }
    grouped.into_iter().map(|(lang, entries)| Ok((lang, NeighborIndex::new(lang, entries)?))).collect()
}

fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Up to `k` ids by descending cosine, ties by ascending id. `exclude` is
/// never returned.
pub fn knn(index: &NeighborIndex, query: &EmbeddingVector, k: usize, exclude: Option<&str>) -> Result<Vec<Neighbor>, BackendError> {
    let scored = par::try_map(&index.entries, |(id, v)| {
        cosine(query, v).map(|score| Neighbor { id: id.clone(), score })
    })?;
    let mut candidates: Vec<Neighbor> = scored.into_iter().filter(|n| Some(n.id.as_str()) != exclude).collect();
    if k == 0 || candidates.is_empty() {
        return Ok(Vec::new());
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, rank);
        candidates.truncate(k);
    }
    candidates.sort_by(rank);
    Ok(candidates)
}

/// Fills every pair's `neighbor_ids` with its `k` nearest same-language
/// neighbours by toxic side. Existing neighbour lists are replaced.
pub fn enrich_neighbors(pairs: &[ParallelPair], scorer: &dyn Scorer, k: usize) -> Result<Vec<ParallelPair>, BackendError> {
    let indexes = build_index(pairs, scorer)?;
    par::try_map(pairs, |p| {
        let index = &indexes[&p.lang];
        let query = index.get(&p.id).expect("every pair is indexed");
        let neighbors = knn(index, query, k, Some(&p.id))?;
        let mut out = p.clone();
        out.neighbor_ids = neighbors.into_iter().map(|n| n.id).collect();
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::FallbackScorer;

    fn v(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn fnv1a_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn fallback_embedding_properties() {
        assert_eq!(fallback_embed(""), EmbeddingVector::zeros(FALLBACK_DIM));
        let abc = fallback_embed("abc");
        assert!((abc.norm() - 1.0).abs() < 1e-12);
        assert_eq!(abc.values().iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(fallback_embed("Hello there"), fallback_embed("hello there"));
        assert!((fallback_embed("ab").norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_conventions() {
        let a = v(&[1.0, 2.0, 3.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&a, &EmbeddingVector::zeros(3)).unwrap(), 0.0);
        assert!(cosine(&a, &v(&[1.0])).is_err());
    }

    #[test]
    fn rejects_non_finite_vectors() {
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
    }

    fn index(vecs: &[(&str, &[f64])]) -> NeighborIndex {
        NeighborIndex::new(Lang::En, vecs.iter().map(|(id, x)| (id.to_string(), v(x))).collect()).unwrap()
    }

    #[test]
    fn knn_ranks_exact_match_first_and_clamps() {
        let idx = index(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 1.0])]);
        let res = knn(&idx, &v(&[0.0, 1.0]), 10, None).unwrap();
        assert_eq!(res.iter().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["b", "c", "a"]);
        let res = knn(&idx, &v(&[0.0, 1.0]), 10, Some("b")).unwrap();
        assert_eq!(res.len(), 2);
        assert!(knn(&idx, &v(&[0.0, 1.0]), 0, None).unwrap().is_empty());
    }

    #[test]
    fn knn_breaks_ties_by_id() {
        let idx = index(&[("z", &[1.0, 0.0]), ("m", &[1.0, 0.0]), ("a", &[1.0, 0.0])]);
        let res = knn(&idx, &v(&[1.0, 0.0]), 2, None).unwrap();
        assert_eq!(res.iter().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["a", "m"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(NeighborIndex::new(Lang::En, vec![("a".into(), v(&[1.0])), ("a".into(), v(&[2.0]))]).is_err());
    }

    #[test]
    fn indexes_partition_by_language() {
        let s = FallbackScorer::default();
        assert!(build_index(&[], &s).unwrap().is_empty());
        let mut pairs = Vec::new();
        for i in 0..3 {
            pairs.push(ParallelPair::new(format!("en{i}"), Lang::En, format!("sentence {i}"), None));
        }
        for i in 0..2 {
            pairs.push(ParallelPair::new(format!("fr{i}"), Lang::Fr, format!("phrase {i}"), None));
        }
        let idx = build_index(&pairs, &s).unwrap();
        assert_eq!(idx[&Lang::En].len(), 3);
        assert_eq!(idx[&Lang::Fr].len(), 2);
        let again = build_index(&pairs, &s).unwrap();
        assert_eq!(idx[&Lang::En].entries(), again[&Lang::En].entries());
    }

    #[test]
    fn enrichment_excludes_self() {
        let s = FallbackScorer::default();
        let singles: Vec<ParallelPair> = Lang::ALL
            .iter()
            .map(|&l| ParallelPair::new(format!("{l}-1"), l, "some text", None))
            .collect();
        assert!(enrich_neighbors(&singles, &s, 3).unwrap().iter().all(|p| p.neighbor_ids.is_empty()));

        let same: Vec<ParallelPair> = (0..4).map(|i| ParallelPair::new(format!("p{i}"), Lang::En, "same words", None)).collect();
        let out = enrich_neighbors(&same, &s, 3).unwrap();
        assert_eq!(out[0].neighbor_ids, ["p1", "p2", "p3"]);
        assert_eq!(out[2].neighbor_ids, ["p0", "p1", "p3"]);
    }
}
