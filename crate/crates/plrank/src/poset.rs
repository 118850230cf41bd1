//! Partial rankings as validated DAGs and their decomposition into ordered
//! partitions.
//!
//! A relation `(a, b)` means `a` is preferred over `b` and is stored as the
//! edge `a -> b`. [`PartialRanking::decompose`] performs the structural half of the
//! approximate-likelihood pipeline: it splits a ranking into weakly
//! connected components and peels each component into an ordered list of
//! partitions by repeatedly extracting the common strict ancestors of all
//! sinks.

use std::collections::HashMap;

use thiserror::Error;

/// Dense non-negative item identifier. The dataset loader assigns these;
/// a symbol table maps external labels when needed.
pub type ItemId = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PosetError {
    #[error("relation endpoints must be declared items (got {0})")]
    UnknownItem(ItemId),
    #[error("item {0} compared with itself")]
    SelfComparison(ItemId),
    #[error("relations contain a cycle; input is not a partial order")]
    CycleDetected,
    #[error("linear extension count exceeds limit {limit}")]
    LimitExceeded { limit: usize },
    #[error("partition {0} is empty")]
    EmptyPartition(usize),
    #[error("item {0} appears in more than one partition")]
    OverlappingPartitions(ItemId),
    #[error("a partitioned preference needs at least one partition")]
    NoPartitions,
}

/// A partial ranking: a set of items plus acyclic, deduplicated preference
/// pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartialRanking {
    items: Vec<ItemId>,
    relations: Vec<(ItemId, ItemId)>,
}

impl PartialRanking {
    /// Validates and builds a partial ranking. Relations are deduplicated;
    /// the digraph with an edge per pair must be acyclic.
    pub fn new(
        items: impl IntoIterator<Item = ItemId>,
        pairs: impl IntoIterator<Item = (ItemId, ItemId)>,
    ) -> Result<Self, PosetError> {
        let mut items: Vec<ItemId> = items.into_iter().collect();
        items.sort_unstable();
        items.dedup();

        let mut relations: Vec<(ItemId, ItemId)> = pairs.into_iter().collect();
        relations.sort_unstable();
        relations.dedup();

        for &(a, b) in &relations {
            if a == b {
                return Err(PosetError::SelfComparison(a));
            }
            for id in [a, b] {
                if items.binary_search(&id).is_err() {
                    return Err(PosetError::UnknownItem(id));
                }
            }
        }

        let pr = Self { items, relations };
        if pr.has_cycle() {
            return Err(PosetError::CycleDetected);
        }
        Ok(pr)
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn relations(&self) -> &[(ItemId, ItemId)] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn index_of(&self, id: ItemId) -> usize {
        self.items.binary_search(&id).expect("validated item id")
    }

    /// Out-adjacency over dense per-ranking indices.
    fn adjacency(&self) -> Adjacency {
        let n = self.items.len();
        let mut out = vec![Vec::new(); n];
        let mut into = vec![Vec::new(); n];
        for &(a, b) in &self.relations {
            let (ia, ib) = (self.index_of(a), self.index_of(b));
            out[ia].push(ib as u32);
            into[ib].push(ia as u32);
        }
        Adjacency { out, into }
    }

    fn has_cycle(&self) -> bool {
        // Kahn's algorithm: a DAG consumes every vertex.
        let n = self.items.len();
        let adj = self.adjacency();
        let mut indeg = vec![0usize; n];
        for outs in &adj.out {
            for &b in outs {
                indeg[b as usize] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop() {
            seen += 1;
            for &b in &adj.out[v] {
                indeg[b as usize] -= 1;
                if indeg[b as usize] == 0 {
                    queue.push(b as usize);
                }
            }
        }
        seen != n
    }

    /// All total orders consistent with every relation, most-preferred
    /// first. Fails with [`PosetError::LimitExceeded`] as soon as more than
    /// `limit` extensions exist.
    pub fn enumerate_linear_extensions(&self, limit: usize) -> Result<Vec<Vec<ItemId>>, PosetError> {
        let n = self.items.len();
        let adj = self.adjacency();
        let mut indeg = vec![0u32; n];
        for outs in &adj.out {
            for &b in outs {
                indeg[b as usize] += 1;
            }
        }
        let mut result = Vec::new();
        let mut prefix = Vec::with_capacity(n);
        let mut used = vec![false; n];
        self.extend_orders(&adj, &mut indeg, &mut used, &mut prefix, &mut result, limit)?;
        Ok(result)
    }

    fn extend_orders(
        &self,
        adj: &Adjacency,
        indeg: &mut [u32],
        used: &mut [bool],
        prefix: &mut Vec<usize>,
        result: &mut Vec<Vec<ItemId>>,
        limit: usize,
    ) -> Result<(), PosetError> {
        let n = self.items.len();
        if prefix.len() == n {
            if result.len() == limit {
                return Err(PosetError::LimitExceeded { limit });
            }
            result.push(prefix.iter().map(|&v| self.items[v]).collect());
            return Ok(());
        }
        for v in 0..n {
            if used[v] || indeg[v] != 0 {
                continue;
            }
            used[v] = true;
            prefix.push(v);
            for &b in &adj.out[v] {
                indeg[b as usize] -= 1;
            }
            self.extend_orders(adj, indeg, used, prefix, result, limit)?;
            for &b in &adj.out[v] {
                indeg[b as usize] += 1;
            }
            prefix.pop();
            used[v] = false;
        }
        Ok(())
    }

    /// Splits the ranking into weakly connected components and extracts one
    /// partitioned preference per component.
    ///
    /// Within a component, the lowest remaining partition is repeatedly set
    /// to the vertices that are *not* strict ancestors of every sink, and
    /// the procedure recurses on the rest. Items with no relations come out
    /// as single-partition rankings.
    pub fn decompose(&self) -> Vec<PartitionedPreference> {
        let n = self.items.len();
        let adj = self.adjacency();

        // Weak components by undirected BFS.
        let mut comp = vec![usize::MAX; n];
        let mut n_comp = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            comp[start] = n_comp;
            while let Some(v) = stack.pop() {
                for &w in adj.out[v].iter().chain(adj.into[v].iter()) {
                    let w = w as usize;
                    if comp[w] == usize::MAX {
                        comp[w] = n_comp;
                        stack.push(w);
                    }
                }
            }
            n_comp += 1;
        }

        let mut members = vec![Vec::new(); n_comp];
        for v in 0..n {
            members[comp[v]].push(v);
        }

        members
            .into_iter()
            .map(|verts| self.peel_component(&adj, verts))
            .collect()
    }

    /// Ordered-partition extraction for one weakly connected component.
    fn peel_component(&self, adj: &Adjacency, mut active: Vec<usize>) -> PartitionedPreference {
        let n = self.items.len();
        let mut in_active = vec![false; n];
        for &v in &active {
            in_active[v] = true;
        }

        let mut partitions_rev: Vec<Vec<ItemId>> = Vec::new();
        let mut reach = vec![0u32; n];
        let mut visited = vec![0u64; n];
        let mut mark = 0u64;

        while !active.is_empty() {
            let sinks: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&v| !adj.out[v].iter().any(|&w| in_active[w as usize]))
                .collect();

            // Count, per node, how many sinks it strictly reaches (reverse
            // DFS per sink); the ancestor set must reach all of them.
            for &v in &active {
                reach[v] = 0;
            }
            for &s in &sinks {
                mark += 1;
                visited[s] = mark; // a node is not its own strict ancestor
                let mut stack = vec![s];
                while let Some(v) = stack.pop() {
                    for &w in &adj.into[v] {
                        let w = w as usize;
                        if in_active[w] && visited[w] != mark {
                            visited[w] = mark;
                            reach[w] += 1;
                            stack.push(w);
                        }
                    }
                }
            }

            let want = sinks.len() as u32;
            let (ancestors, bottom): (Vec<usize>, Vec<usize>) =
                active.iter().partition(|&&v| reach[v] == want);

            let mut block: Vec<ItemId> = bottom.iter().map(|&v| self.items[v]).collect();
            block.sort_unstable();
            partitions_rev.push(block);

            for &v in &bottom {
                in_active[v] = false;
            }
            active = ancestors;
        }

        partitions_rev.reverse();
        PartitionedPreference::new(partitions_rev).expect("peeling yields disjoint non-empty blocks")
    }
}

struct Adjacency {
    out: Vec<Vec<u32>>,
    into: Vec<Vec<u32>>,
}

/// An ordered list of disjoint item blocks `S_1 > S_2 > ... > S_M`; the
/// order of items inside a block is unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionedPreference {
    partitions: Vec<Vec<ItemId>>,
}

impl PartitionedPreference {
    pub fn new(partitions: Vec<Vec<ItemId>>) -> Result<Self, PosetError> {
        if partitions.is_empty() {
            return Err(PosetError::NoPartitions);
        }
        let mut seen = HashMap::new();
        for (m, block) in partitions.iter().enumerate() {
            if block.is_empty() {
                return Err(PosetError::EmptyPartition(m));
            }
            for &id in block {
                if seen.insert(id, m).is_some() {
                    return Err(PosetError::OverlappingPartitions(id));
                }
            }
        }
        let mut partitions = partitions;
        for block in &mut partitions {
            block.sort_unstable();
        }
        Ok(Self { partitions })
    }

    /// Convenience constructor for a total order: one singleton per rank.
    pub fn from_order(order: &[ItemId]) -> Result<Self, PosetError> {
        Self::new(order.iter().map(|&i| vec![i]).collect())
    }

    pub fn partitions(&self) -> &[Vec<ItemId>] {
        &self.partitions
    }

    /// Number of partitions `M`.
    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    /// All items, in block order.
    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.partitions.iter().flatten().copied()
    }

    pub fn num_items(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }

    /// 0-based index of the partition containing `item`.
    pub fn partition_of(&self, item: ItemId) -> Option<usize> {
        self.partitions
            .iter()
            .position(|block| block.binary_search(&item).is_ok())
    }

    /// Equivalent poset: every item of a block is preferred over every item
    /// of the next block (transitivity supplies the rest).
    pub fn to_partial_ranking(&self) -> PartialRanking {
        let items: Vec<ItemId> = self.items().collect();
        let mut pairs = Vec::new();
        for w in self.partitions.windows(2) {
            for &a in &w[0] {
                for &b in &w[1] {
                    pairs.push((a, b));
                }
            }
        }
        PartialRanking::new(items, pairs).expect("blocks are disjoint and ordered")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pr(items: &[ItemId], pairs: &[(ItemId, ItemId)]) -> PartialRanking {
        PartialRanking::new(items.iter().copied(), pairs.iter().copied()).unwrap()
    }

    /// The running counterexample poset: a valid partial ranking that is
    /// not itself a partitioned preference.
    fn counterexample() -> PartialRanking {
        pr(&[1, 2, 3, 4, 5], &[(3, 2), (3, 5), (4, 1)])
    }

    #[test]
    fn builds_chain() {
        let p = pr(&[1, 2, 3], &[(1, 2), (2, 3)]);
        assert_eq!(p.len(), 3);
        assert_eq!(p.relations().len(), 2);
    }

    #[test]
    fn rejects_two_cycle() {
        let err = PartialRanking::new([1, 2], [(1, 2), (2, 1)]).unwrap_err();
        assert_eq!(err, PosetError::CycleDetected);
    }

    #[test]
    fn rejects_self_comparison_and_unknown_item() {
        assert_eq!(
            PartialRanking::new([1, 2], [(1, 1)]).unwrap_err(),
            PosetError::SelfComparison(1)
        );
        assert_eq!(
            PartialRanking::new([1, 2], [(1, 7)]).unwrap_err(),
            PosetError::UnknownItem(7)
        );
    }

    #[test]
    fn deduplicates_relations() {
        let p = PartialRanking::new([1, 2], [(1, 2), (1, 2)]).unwrap();
        assert_eq!(p.relations(), &[(1, 2)]);
    }

    #[test]
    fn accepts_counterexample_poset() {
        let p = counterexample();
        assert_eq!(p.len(), 5);
        assert_eq!(p.relations().len(), 3);
    }

    #[test]
    fn decomposes_counterexample() {
        let parts = counterexample().decompose();
        // Components {1,4} and {2,3,5}: sinks {1} and {2,5}.
        let mut got: Vec<Vec<Vec<ItemId>>> =
            parts.iter().map(|pp| pp.partitions().to_vec()).collect();
        got.sort();
        assert_eq!(got, vec![vec![vec![3], vec![2, 5]], vec![vec![4], vec![1]]]);
    }

    #[test]
    fn decomposes_empty_relations_into_singletons() {
        let parts = pr(&[1, 2, 3], &[]).decompose();
        assert_eq!(parts.len(), 3);
        for pp in &parts {
            assert_eq!(pp.num_partitions(), 1);
            assert_eq!(pp.num_items(), 1);
        }
    }

    #[test]
    fn decompose_drops_inner_relation() {
        let parts = pr(&[1, 2, 3, 4], &[(1, 2), (2, 3), (1, 4)]).decompose();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].partitions(), &[vec![1], vec![2, 3, 4]]);
    }

    #[test]
    fn decompose_keeps_partitioned_preference_verbatim() {
        let pp = PartitionedPreference::new(vec![vec![1, 2], vec![3], vec![4, 5]]).unwrap();
        let parts = pp.to_partial_ranking().decompose();
        assert_eq!(parts, vec![pp]);
    }

    #[test]
    fn extension_counts() {
        assert_eq!(
            pr(&[1, 2, 3], &[(1, 2), (2, 3)])
                .enumerate_linear_extensions(10)
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            pr(&[1, 2, 3], &[]).enumerate_linear_extensions(10).unwrap().len(),
            6
        );
        assert_eq!(
            counterexample().enumerate_linear_extensions(200).unwrap().len(),
            20
        );
    }

    #[test]
    fn extension_limit_guard() {
        let err = pr(&[1, 2, 3], &[]).enumerate_linear_extensions(5).unwrap_err();
        assert_eq!(err, PosetError::LimitExceeded { limit: 5 });
    }

    #[test]
    fn extensions_respect_relations() {
        let p = counterexample();
        for ext in p.enumerate_linear_extensions(100).unwrap() {
            let pos: HashMap<ItemId, usize> =
                ext.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            for &(a, b) in p.relations() {
                assert!(pos[&a] < pos[&b]);
            }
        }
    }

    #[test]
    fn partitioned_preference_validation() {
        assert_eq!(
            PartitionedPreference::new(vec![]).unwrap_err(),
            PosetError::NoPartitions
        );
        assert_eq!(
            PartitionedPreference::new(vec![vec![1], vec![]]).unwrap_err(),
            PosetError::EmptyPartition(1)
        );
        assert_eq!(
            PartitionedPreference::new(vec![vec![1, 2], vec![2]]).unwrap_err(),
            PosetError::OverlappingPartitions(2)
        );
    }

    #[test]
    fn decompose_never_inverts_relations() {
        let p = pr(
            &[0, 1, 2, 3, 4, 5],
            &[(0, 3), (0, 4), (1, 3), (1, 4), (2, 3), (5, 0), (5, 1)],
        );
        let parts = p.decompose();
        let mut index: HashMap<ItemId, (usize, usize)> = HashMap::new();
        for (c, pp) in parts.iter().enumerate() {
            for (m, block) in pp.partitions().iter().enumerate() {
                for &i in block {
                    index.insert(i, (c, m));
                }
            }
        }
        for &(a, b) in p.relations() {
            let (ca, ma) = index[&a];
            let (cb, mb) = index[&b];
            assert_eq!(ca, cb, "relation endpoints stay in one component");
            assert!(ma <= mb, "dropped relations are never inverted");
        }
    }
}
