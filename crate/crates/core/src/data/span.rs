use rand::Rng;

use super::DataError;

/// How the coarse-grained context is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanMode {
    /// A randomly cropped span of the same document.
    Crop,
    /// The document itself.
    SelfContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanPair {
    pub anchor_ids: Vec<u32>,
    pub context_ids: Vec<u32>,
    /// Offset of the context span inside the document.
    pub start: usize,
}

/// Samples a coarse context for `doc` (body ids). The span start is
/// uniform over `0..=len-min`; its length is uniform in `range`, clipped at
/// the document end. Both sides are truncated to `max_body` tokens.
pub fn sample_coarse_span<R: Rng + ?Sized>(
    doc: &[u32],
    range: (usize, usize),
    mode: SpanMode,
    max_body: usize,
    rng: &mut R,
) -> Result<SpanPair, DataError> {
    let (min, max) = range;
    if min == 0 || min > max {
        return Err(DataError::Contract(format!("invalid span range [{min}, {max}]")));
    }
    if doc.len() < min {
        return Err(DataError::DocumentTooShort { len: doc.len(), min });
    }
    let anchor: Vec<u32> = doc[..doc.len().min(max_body)].to_vec();
    if mode == SpanMode::SelfContext {
        return Ok(SpanPair {
            context_ids: anchor.clone(),
            anchor_ids: anchor,
            start: 0,
        });
    }
    let start = rng.gen_range(0..=doc.len() - min);
    let len = rng.gen_range(min..=max);
    let end = (start + len).min(doc.len());
    let mut context = doc[start..end].to_vec();
    context.truncate(max_body);
    Ok(SpanPair {
        anchor_ids: anchor,
        context_ids: context,
        start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc(n: usize) -> Vec<u32> {
        (0..n as u32).map(|i| 5 + i).collect()
    }

    #[test]
    fn fixed_length_span_bounds() {
        let d = doc(100);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let s = sample_coarse_span(&d, (20, 20), SpanMode::Crop, 126, &mut rng).unwrap();
            assert_eq!(s.context_ids.len(), 20);
            assert!(s.start <= 80);
            assert_eq!(&d[s.start..s.start + 20], s.context_ids.as_slice());
        }
    }

    #[test]
    fn self_mode_returns_passage() {
        let d = doc(30);
        let s = sample_coarse_span(&d, (8, 16), SpanMode::SelfContext, 126, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.context_ids, s.anchor_ids);
        assert_eq!(s.anchor_ids, d);
    }

    #[test]
    fn start_offsets_cover_valid_positions() {
        // Monte Carlo: 10k draws over a length-100 document with min span 20
        // have 81 valid start offsets.
        let d = doc(100);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hit = [false; 81];
        for _ in 0..10_000 {
            let s = sample_coarse_span(&d, (20, 40), SpanMode::Crop, 126, &mut rng).unwrap();
            hit[s.start] = true;
            assert!(s.context_ids.len() >= 20 || s.start + s.context_ids.len() == 100);
        }
        let covered = hit.iter().filter(|&&h| h).count() as f64 / 81.0;
        assert!(covered >= 0.95, "coverage {covered}");
    }

    #[test]
    fn short_document_is_reported() {
        let err = sample_coarse_span(&doc(5), (8, 16), SpanMode::Crop, 126, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, DataError::DocumentTooShort { len: 5, min: 8 }));
    }

    #[test]
    fn truncates_to_max_body() {
        let d = doc(300);
        let s = sample_coarse_span(&d, (150, 200), SpanMode::Crop, 126, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(s.anchor_ids.len(), 126);
        assert!(s.context_ids.len() <= 126);
    }
}
