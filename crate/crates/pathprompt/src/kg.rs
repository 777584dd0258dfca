//! Immutable in-memory knowledge graph with a relation-first adjacency index.
//!
//! Triples load from tab-separated text (`head<TAB>relation<TAB>tail`, UTF-8,
//! one triple per line, no header, labels may not contain tabs or newlines).
//! After construction the graph never mutates, so all read operations are
//! safe under unrestricted concurrent access.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown entity label `{0}`")]
    UnknownEntityLabel(String),
    #[error("unknown entity id {0}")]
    UnknownEntity(u32),
    #[error("unknown relation id {0}")]
    UnknownRelation(u32),
    #[error("search depth must be at least 1")]
    ZeroDepth,
    #[error("relation link must be non-empty")]
    EmptyLink,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

/// One directed edge `head --relation--> tail`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

/// An ordered sequence of relations describing a traversal pattern,
/// without entities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationLink(pub Vec<RelationId>);

impl RelationLink {
    pub fn new(relations: Vec<RelationId>) -> Result<Self, KgError> {
        if relations.is_empty() {
            return Err(KgError::EmptyLink);
        }
        Ok(RelationLink(relations))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.0
    }
}

/// A concrete instantiation of a relation link: the origin entity followed
/// by one `(relation, entity)` step per hop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReasoningPath {
    pub origin: EntityId,
    pub steps: Vec<(RelationId, EntityId)>,
}

impl ReasoningPath {
    /// The relation sequence this path realizes.
    pub fn link(&self) -> RelationLink {
        RelationLink(self.steps.iter().map(|(r, _)| *r).collect())
    }

    /// The entity the path ends on.
    pub fn terminal(&self) -> EntityId {
        self.steps.last().map(|(_, e)| *e).unwrap_or(self.origin)
    }

    /// The path decomposed into its triples.
    pub fn triples(&self) -> Vec<Triple> {
        let mut head = self.origin;
        self.steps
            .iter()
            .map(|&(relation, tail)| {
                let t = Triple { head, relation, tail };
                head = tail;
                t
            })
            .collect()
    }

    /// True when every step is a stored edge of `kg`.
    pub fn validate(&self, kg: &KnowledgeGraph) -> bool {
        !self.steps.is_empty() && self.triples().iter().all(|t| kg.contains_triple(t))
    }
}

/// Ordered label vocabulary with dense, 0-based, first-appearance ids.
#[derive(Debug, Clone, Default)]
struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Immutable triple store with entity/relation vocabularies and an
/// out-edge index sorted by `(relation, tail)`.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    out_index: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    /// Parse tab-separated triples. Vocabulary ids follow first appearance;
    /// duplicate triples collapse to one. An empty stream yields a valid
    /// empty graph.
    pub fn load_triples<R: BufRead>(reader: R) -> Result<Self, KgError> {
        let mut labeled = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::MalformedLine {
                    line: i + 1,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(KgError::MalformedLine { line: i + 1, reason: "empty field".into() });
            }
            labeled.push((fields[0].to_string(), fields[1].to_string(), fields[2].to_string()));
        }
        Ok(Self::from_labeled_triples(labeled.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))))
    }

    /// Build from already-split `(head, relation, tail)` labels.
    pub fn from_labeled_triples<'a>(iter: impl Iterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut triples = Vec::new();
        for (h, r, t) in iter {
            let head = EntityId(entities.intern(h));
            let relation = RelationId(relations.intern(r));
            let tail = EntityId(entities.intern(t));
            triples.push(Triple { head, relation, tail });
        }
        triples.sort_unstable();
        triples.dedup();

        let mut out_index = vec![Vec::new(); entities.len()];
        for t in &triples {
            out_index[t.head.0 as usize].push((t.relation, t.tail));
        }
        for edges in out_index.iter_mut() {
            edges.sort_unstable();
        }
        KnowledgeGraph { entities, relations, triples, out_index }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.id(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.id(label).map(RelationId)
    }

    pub fn entity_label(&self, id: EntityId) -> Result<&str, KgError> {
        self.entities.label(id.0).ok_or(KgError::UnknownEntity(id.0))
    }

    pub fn relation_label(&self, id: RelationId) -> Result<&str, KgError> {
        self.relations.label(id.0).ok_or(KgError::UnknownRelation(id.0))
    }

    pub fn entity_labels(&self) -> impl Iterator<Item = &str> {
        self.entities.labels.iter().map(String::as_str)
    }

    pub fn relation_labels(&self) -> impl Iterator<Item = &str> {
        self.relations.labels.iter().map(String::as_str)
    }

    /// Out-edges of `e`, sorted by `(relation, tail)`.
    pub fn out_edges(&self, e: EntityId) -> Result<&[(RelationId, EntityId)], KgError> {
        self.out_index.get(e.0 as usize).map(Vec::as_slice).ok_or(KgError::UnknownEntity(e.0))
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triples.binary_search(t).is_ok()
    }

    /// Label sequence of a link, for display and tie-breaking.
    pub fn link_labels(&self, link: &RelationLink) -> Result<Vec<String>, KgError> {
        link.relations().iter().map(|r| self.relation_label(*r).map(str::to_string)).collect()
    }

    /// All distinct relation sequences of length `1..=max_depth` realized by
    /// at least one path starting at `anchor`. Entities may be revisited;
    /// only the depth bound limits the search. Results come back in
    /// canonical order: by length, then lexicographic on relation ids.
    pub fn enumerate_relation_links(
        &self,
        anchor: EntityId,
        max_depth: usize,
    ) -> Result<Vec<RelationLink>, KgError> {
        if max_depth == 0 {
            return Err(KgError::ZeroDepth);
        }
        if anchor.0 as usize >= self.entity_count() {
            return Err(KgError::UnknownEntity(anchor.0));
        }
        let mut found = Vec::new();
        let mut prefix = Vec::new();
        self.extend_links(&[anchor], max_depth, &mut prefix, &mut found);
        found.sort_unstable_by(|a, b| (a.len(), &a.0).cmp(&(b.len(), &b.0)));
        Ok(found)
    }

    fn extend_links(
        &self,
        frontier: &[EntityId],
        remaining: usize,
        prefix: &mut Vec<RelationId>,
        found: &mut Vec<RelationLink>,
    ) {
        let mut next_by_relation: BTreeMap<RelationId, BTreeSet<EntityId>> = BTreeMap::new();
        for &e in frontier {
            for &(r, t) in &self.out_index[e.0 as usize] {
                next_by_relation.entry(r).or_default().insert(t);
            }
        }
        for (r, nexts) in next_by_relation {
            prefix.push(r);
            found.push(RelationLink(prefix.clone()));
            if remaining > 1 {
                let frontier: Vec<EntityId> = nexts.into_iter().collect();
                self.extend_links(&frontier, remaining - 1, prefix, found);
            }
            prefix.pop();
        }
    }

    /// Up to `cap` paths starting at `anchor` and realizing `link`, in
    /// depth-first order over the sorted out-index.
    pub fn instantiate_paths(
        &self,
        anchor: EntityId,
        link: &RelationLink,
        cap: usize,
    ) -> Result<Vec<ReasoningPath>, KgError> {
        if link.is_empty() {
            return Err(KgError::EmptyLink);
        }
        if anchor.0 as usize >= self.entity_count() {
            return Err(KgError::UnknownEntity(anchor.0));
        }
        let mut out = Vec::new();
        let mut steps = Vec::new();
        self.walk_paths(anchor, anchor, link.relations(), cap, &mut steps, &mut out);
        Ok(out)
    }

    fn walk_paths(
        &self,
        origin: EntityId,
        at: EntityId,
        remaining: &[RelationId],
        cap: usize,
        steps: &mut Vec<(RelationId, EntityId)>,
        out: &mut Vec<ReasoningPath>,
    ) {
        if out.len() >= cap {
            return;
        }
        let Some((&want, rest)) = remaining.split_first() else {
            out.push(ReasoningPath { origin, steps: steps.clone() });
            return;
        };
        for &(r, t) in &self.out_index[at.0 as usize] {
            if r != want {
                continue;
            }
            steps.push((r, t));
            self.walk_paths(origin, t, rest, cap, steps, out);
            steps.pop();
            if out.len() >= cap {
                return;
            }
        }
    }

    /// All triples as labels, sorted; id-assignment-independent graph identity.
    pub fn labeled_triples(&self) -> Vec<(String, String, String)> {
        let mut out: Vec<(String, String, String)> = self
            .triples
            .iter()
            .map(|t| {
                (
                    self.entities.label(t.head.0).unwrap_or_default().to_string(),
                    self.relations.label(t.relation.0).unwrap_or_default().to_string(),
                    self.entities.label(t.tail.0).unwrap_or_default().to_string(),
                )
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Serialize back to the tab-separated triple format, in stored order.
    pub fn write_triples<W: std::io::Write>(&self, mut w: W) -> Result<(), KgError> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_label(t.head)?,
                self.relation_label(t.relation)?,
                self.entity_label(t.tail)?
            )?;
        }
        Ok(())
    }

    /// Order-sensitive hash of both vocabularies; adapter checkpoints use it
    /// to refuse loading against a different graph.
    pub fn vocab_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for label in &self.entities.labels {
            h.update(label.as_bytes());
            h.update(&[0xff]);
        }
        h.update(&[0xfe]);
        for label in &self.relations.labels {
            h.update(label.as_bytes());
            h.update(&[0xff]);
        }
        h.finish()
    }
}

/// FNV-1a, kept local so hashes stay stable across toolchains.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn graph_from(text: &str) -> KnowledgeGraph {
        KnowledgeGraph::load_triples(Cursor::new(text)).unwrap()
    }

    fn link(kg: &KnowledgeGraph, labels: &[&str]) -> RelationLink {
        RelationLink::new(labels.iter().map(|l| kg.relation_id(l).unwrap()).collect()).unwrap()
    }

    #[test]
    fn empty_stream_is_an_empty_graph() {
        let kg = graph_from("");
        assert_eq!(kg.entity_count(), 0);
        assert_eq!(kg.relation_count(), 0);
        assert_eq!(kg.triple_count(), 0);
    }

    #[test]
    fn counts_follow_first_appearance() {
        let kg = graph_from("a\tr1\tb\nb\tr2\tc\n");
        assert_eq!(kg.entity_count(), 3);
        assert_eq!(kg.relation_count(), 2);
        assert_eq!(kg.triple_count(), 2);
        assert_eq!(kg.entity_id("a"), Some(EntityId(0)));
        assert_eq!(kg.entity_id("b"), Some(EntityId(1)));
        assert_eq!(kg.entity_id("c"), Some(EntityId(2)));
    }

    #[test]
    fn duplicate_triples_collapse() {
        let kg = graph_from("a\tr1\tb\na\tr1\tb\n");
        assert_eq!(kg.triple_count(), 1);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = KnowledgeGraph::load_triples(Cursor::new("a\tr1\tb\na\tr1\n")).unwrap_err();
        assert!(matches!(err, KgError::MalformedLine { line: 2, .. }), "{err}");
        let err = KnowledgeGraph::load_triples(Cursor::new("a\t\tb\n")).unwrap_err();
        assert!(matches!(err, KgError::MalformedLine { line: 1, .. }), "{err}");
    }

    #[test]
    fn chain_links_up_to_depth() {
        let kg = graph_from("a\tr1\tb\nb\tr2\tc\n");
        let anchor = kg.entity_id("a").unwrap();
        let links = kg.enumerate_relation_links(anchor, 2).unwrap();
        assert_eq!(links, vec![link(&kg, &["r1"]), link(&kg, &["r1", "r2"])]);
        let links = kg.enumerate_relation_links(anchor, 1).unwrap();
        assert_eq!(links, vec![link(&kg, &["r1"])]);
    }

    #[test]
    fn unknown_anchor_is_an_error() {
        let kg = graph_from("a\tr1\tb\n");
        let err = kg.enumerate_relation_links(EntityId(99), 1).unwrap_err();
        assert!(matches!(err, KgError::UnknownEntity(99)));
    }

    #[test]
    fn instantiate_single_chain() {
        let kg = graph_from("a\tr1\tb\nb\tr2\tc\n");
        let anchor = kg.entity_id("a").unwrap();
        let paths = kg.instantiate_paths(anchor, &link(&kg, &["r1", "r2"]), 10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].origin, anchor);
        assert_eq!(paths[0].terminal(), kg.entity_id("c").unwrap());
        assert!(paths[0].validate(&kg));
    }

    #[test]
    fn instantiate_branches_and_misses() {
        let kg = graph_from("a\tr1\tb\na\tr1\tb2\n");
        let anchor = kg.entity_id("a").unwrap();
        let paths = kg.instantiate_paths(anchor, &link(&kg, &["r1"]), 10).unwrap();
        assert_eq!(paths.len(), 2);
        // Absent relation sequences yield no paths rather than an error.
        let kg2 = graph_from("a\tr1\tb\nx\tr9\ty\n");
        let anchor = kg2.entity_id("a").unwrap();
        assert!(kg2.instantiate_paths(anchor, &link(&kg2, &["r9"]), 10).unwrap().is_empty());
    }

    #[test]
    fn instantiate_respects_cap() {
        let kg = graph_from("a\tr1\tb\na\tr1\tc\na\tr1\td\n");
        let anchor = kg.entity_id("a").unwrap();
        let paths = kg.instantiate_paths(anchor, &link(&kg, &["r1"]), 2).unwrap();
        assert_eq!(paths.len(), 2);
    }

    #[test]
    fn cycles_are_allowed_within_the_depth_bound() {
        let kg = graph_from("a\tr\ta\n");
        let anchor = kg.entity_id("a").unwrap();
        let links = kg.enumerate_relation_links(anchor, 3).unwrap();
        assert_eq!(links.len(), 3); // [r], [r,r], [r,r,r]
    }

    #[test]
    fn out_index_matches_stored_triples() {
        let kg = graph_from("a\tr1\tb\nb\tr2\tc\na\tr2\tc\n");
        let mut rebuilt: Vec<Triple> = Vec::new();
        for e in 0..kg.entity_count() as u32 {
            for &(r, t) in kg.out_edges(EntityId(e)).unwrap() {
                rebuilt.push(Triple { head: EntityId(e), relation: r, tail: t });
            }
        }
        rebuilt.sort_unstable();
        assert_eq!(rebuilt, kg.triples());
    }

    // Brute-force oracle: enumerate every path of length <= depth by
    // scanning the full triple list, ignoring the adjacency index.
    fn brute_force_paths(kg: &KnowledgeGraph, anchor: EntityId, depth: usize) -> Vec<ReasoningPath> {
        let mut complete = Vec::new();
        let mut frontier = vec![ReasoningPath { origin: anchor, steps: vec![] }];
        for _ in 0..depth {
            let mut next = Vec::new();
            for p in &frontier {
                let at = p.terminal();
                for t in kg.triples() {
                    if t.head == at {
                        let mut steps = p.steps.clone();
                        steps.push((t.relation, t.tail));
                        next.push(ReasoningPath { origin: anchor, steps });
                    }
                }
            }
            complete.extend(next.iter().cloned());
            frontier = next;
        }
        complete
    }

    fn brute_force_links(kg: &KnowledgeGraph, anchor: EntityId, depth: usize) -> Vec<RelationLink> {
        let mut links: Vec<RelationLink> =
            brute_force_paths(kg, anchor, depth).iter().map(|p| p.link()).collect();
        links.sort_unstable_by(|a, b| (a.len(), &a.0).cmp(&(b.len(), &b.0)));
        links.dedup();
        links
    }

    fn random_graph_text(seed: u64, max_entities: usize, max_relations: usize) -> String {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_e = rng.random_range(2..=max_entities);
        let n_r = rng.random_range(1..=max_relations);
        let n_t = rng.random_range(1..=(n_e * 3));
        let mut text = String::new();
        for _ in 0..n_t {
            let h = rng.random_range(0..n_e);
            let r = rng.random_range(0..n_r);
            let t = rng.random_range(0..n_e);
            text.push_str(&format!("e{}\trel{}\te{}\n", h, r, t));
        }
        text
    }

    #[test]
    fn link_enumeration_matches_brute_force_on_random_graphs() {
        for seed in 0..30 {
            let kg = graph_from(&random_graph_text(seed, 8, 3));
            let anchor = kg.entity_id("e0").or_else(|| Some(EntityId(0))).unwrap();
            if anchor.0 as usize >= kg.entity_count() {
                continue;
            }
            let fast = kg.enumerate_relation_links(anchor, 3).unwrap();
            let slow = brute_force_links(&kg, anchor, 3);
            assert_eq!(fast, slow, "seed {seed}");
        }
    }

    #[test]
    fn instantiation_matches_brute_force_per_link() {
        for seed in 0..10 {
            let kg = graph_from(&random_graph_text(seed, 6, 2));
            let anchor = EntityId(0);
            for l in kg.enumerate_relation_links(anchor, 3).unwrap() {
                let mut fast = kg.instantiate_paths(anchor, &l, usize::MAX).unwrap();
                let mut slow: Vec<ReasoningPath> = brute_force_paths(&kg, anchor, 3)
                    .into_iter()
                    .filter(|p| p.link() == l)
                    .collect();
                fast.sort_unstable();
                slow.sort_unstable();
                slow.dedup();
                assert_eq!(fast, slow, "seed {seed} link {l:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn reload_of_serialized_graph_is_the_same_graph(seed in 0u64..500) {
            let kg = graph_from(&random_graph_text(seed, 10, 3));
            let mut bytes = Vec::new();
            kg.write_triples(&mut bytes).unwrap();
            let kg2 = KnowledgeGraph::load_triples(Cursor::new(&bytes)).unwrap();
            prop_assert_eq!(kg.triple_count(), kg2.triple_count());
            prop_assert_eq!(kg.entity_count(), kg2.entity_count());
            prop_assert_eq!(kg.labeled_triples(), kg2.labeled_triples());
        }

        #[test]
        fn double_load_assigns_identical_ids(seed in 0u64..200) {
            let text = random_graph_text(seed, 10, 3);
            let a = graph_from(&text);
            let b = graph_from(&text);
            prop_assert_eq!(a.triples(), b.triples());
            prop_assert_eq!(a.vocab_hash(), b.vocab_hash());
        }
    }
}
