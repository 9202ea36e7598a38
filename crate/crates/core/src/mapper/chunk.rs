use std::ops::Range;

/// Chunk length for `num_pairs` tasks over `num_workers` workers:
/// `ceil((num_pairs + num_workers - 1) / num_workers)`.
pub fn chunk_size(num_pairs: usize, num_workers: usize) -> usize {
    assert!(num_workers >= 1, "at least one worker is required");
    (num_pairs + num_workers - 1).div_ceil(num_workers)
}

/// Contiguous, disjoint slices of the sorted pair list, one per worker.
/// Empty slices are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    size: usize,
    chunks: Vec<Range<usize>>,
}

impl ChunkPlan {
    pub fn new(num_pairs: usize, num_workers: usize) -> Self {
        let size = chunk_size(num_pairs, num_workers);
        let chunks = (0..num_workers)
            .map(|i| (i * size).min(num_pairs)..((i + 1) * size).min(num_pairs))
            .filter(|r| !r.is_empty())
            .collect();
        Self { size, chunks }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn chunks(&self) -> &[Range<usize>] {
        &self.chunks
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.chunks.iter().map(ExactSizeIterator::len).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(chunk_size(10, 3), 4);
        assert_eq!(ChunkPlan::new(10, 3).lengths(), vec![4, 4, 2]);
        assert_eq!(ChunkPlan::new(9, 3).lengths(), vec![4, 4, 1]);
        assert_eq!(ChunkPlan::new(5, 1).lengths(), vec![5]);
    }

    #[test]
    fn more_workers_than_pairs_drops_empty_chunks() {
        let plan = ChunkPlan::new(3, 8);
        assert_eq!(plan.lengths(), vec![2, 1]);
        assert!(ChunkPlan::new(0, 4).chunks().is_empty());
    }
}
