//! Seeded synthetic benchmark generation: a random knowledge graph plus
//! train/test question sets whose answers are reachable by construction.
//!
//! Entity labels are single alphanumeric tokens; relation labels use the
//! dotted `base.{domain}.{type}.{key}_{suffix}` convention so that the
//! lexical scorer sees their content words. Each question mentions every
//! content word of its gold relations, which keeps both link ranking and
//! hop classification learnable, and the generator verifies per question
//! that the gold link actually ranks first before accepting it.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kg::{EntityId, KnowledgeGraph, RelationId, RelationLink};
use crate::retrieval::{retrieve_paths, score_links, OverlapScorer, Question};

use super::template::PromptTemplate;
use super::{HarnessError, TrainConfig};

const ENTITY_WORDS: [&str; 40] = [
    "amber", "basil", "cedar", "dahlia", "ember", "fennel", "garnet", "hazel", "indigo", "jasper",
    "kelp", "linden", "maple", "nettle", "ochre", "pepper", "quartz", "rowan", "sorrel", "tansy",
    "umber", "violet", "walnut", "yarrow", "zinnia", "aspen", "briar", "clover", "damson", "elder",
    "fern", "ginger", "heather", "iris", "juniper", "laurel", "myrtle", "nutmeg", "olive", "poppy",
];

const DOMAINS: [&str; 10] =
    ["people", "location", "film", "music", "sports", "business", "travel", "science", "food", "art"];

const TYPES: [&str; 10] =
    ["person", "place", "work", "group", "event", "record", "topic", "item", "area", "study"];

const KEYS: [&str; 48] = [
    "founder", "capital", "spouse", "author", "parent", "friend", "employer", "winner", "teacher",
    "owner", "maker", "leader", "member", "origin", "partner", "sponsor", "editor", "singer",
    "keeper", "guide", "patron", "critic", "tenant", "broker", "curator", "advisor", "dealer",
    "mentor", "scout", "umpire", "warden", "herald", "envoy", "notary", "deputy", "bailiff",
    "marshal", "consul", "regent", "steward", "rival", "backer", "ally", "agent", "pilot",
    "drummer", "sculptor", "poet",
];

const SUBJECTS: [&str; 10] =
    ["national", "regional", "classic", "modern", "central", "formal", "annual", "native", "joint", "prime"];

const SUFFIXES: [&str; 4] = ["of", "for", "by", "with"];

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub entities: usize,
    pub relations: usize,
    pub train_questions: usize,
    pub test_questions: usize,
    /// Hop ceiling; 2 or 4.
    pub max_hops: usize,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub kg: KnowledgeGraph,
    pub train: Vec<Question>,
    pub test: Vec<Question>,
}

/// Files a [`SynthData::write`] call produced.
#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub kg: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

fn entity_label(i: usize) -> String {
    format!("{}{}", ENTITY_WORDS[i % ENTITY_WORDS.len()], i)
}

fn relation_parts(i: usize, rng: &mut ChaCha8Rng) -> (String, String) {
    let domain = DOMAINS[rng.random_range(0..DOMAINS.len())];
    let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
    let typ = TYPES[rng.random_range(0..TYPES.len())];
    let key = KEYS[i];
    let suffix = SUFFIXES[rng.random_range(0..SUFFIXES.len())];
    let label = format!("base.{domain}.{subject}.{typ}.{key}_{suffix}");
    let phrase = format!("{domain} {subject} {typ} {key} {suffix}");
    (label, phrase)
}

/// Nested question phrasing: the last hop's relation is outermost.
fn question_text(phrases: &[String], link: &[usize], anchor: &str) -> String {
    let mut parts = Vec::with_capacity(link.len());
    for &r in link.iter().rev() {
        parts.push(phrases[r].clone());
    }
    format!("what is the {} {} ?", parts.join(" the "), anchor)
}

/// Generate the benchmark. Deterministic: the same config yields the same
/// graph and questions, byte for byte once written.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData, HarnessError> {
    if cfg.entities == 0 || cfg.relations == 0 || cfg.train_questions + cfg.test_questions == 0 {
        return Err(HarnessError::UnsatisfiableSynth { detail: "sizes must be positive".into() });
    }
    if cfg.max_hops != 2 && cfg.max_hops != 4 {
        return Err(HarnessError::UnsatisfiableSynth {
            detail: format!("max_hops must be 2 or 4, got {}", cfg.max_hops),
        });
    }
    if cfg.relations > KEYS.len() {
        return Err(HarnessError::UnsatisfiableSynth {
            detail: format!("at most {} relations supported, got {}", KEYS.len(), cfg.relations),
        });
    }
    if cfg.entities < 4 {
        return Err(HarnessError::UnsatisfiableSynth { detail: "need at least 4 entities".into() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let entity_labels: Vec<String> = (0..cfg.entities).map(entity_label).collect();
    let mut relation_labels = Vec::with_capacity(cfg.relations);
    let mut relation_phrases = Vec::with_capacity(cfg.relations);
    for i in 0..cfg.relations {
        let (label, phrase) = relation_parts(i, &mut rng);
        relation_labels.push(label);
        relation_phrases.push(phrase);
    }

    // Edges: every entity gets 4 relations with 2 tails each, so several
    // links surface per question and each selected link instantiates
    // multiple paths.
    let rels_per_entity = 4.min(cfg.relations);
    let tails_per_relation = 2.min(cfg.entities.saturating_sub(1));
    let mut triples: Vec<(String, String, String)> = Vec::new();
    for e in 0..cfg.entities {
        let mut rels: Vec<usize> = Vec::new();
        while rels.len() < rels_per_entity {
            let r = rng.random_range(0..cfg.relations);
            if !rels.contains(&r) {
                rels.push(r);
            }
        }
        for r in rels {
            let mut tails: Vec<usize> = Vec::new();
            while tails.len() < tails_per_relation {
                let t = rng.random_range(0..cfg.entities);
                if t != e && !tails.contains(&t) {
                    tails.push(t);
                }
            }
            for t in tails {
                triples.push((entity_labels[e].clone(), relation_labels[r].clone(), entity_labels[t].clone()));
            }
        }
    }
    let kg = KnowledgeGraph::from_labeled_triples(triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())));

    let relation_index: Vec<RelationId> = relation_labels
        .iter()
        .map(|l| kg.relation_id(l).expect("generated relation must intern"))
        .collect();
    let relation_pos: std::collections::HashMap<RelationId, usize> =
        relation_index.iter().enumerate().map(|(i, r)| (*r, i)).collect();

    let total = cfg.train_questions + cfg.test_questions;
    let mut questions = Vec::with_capacity(total);
    let mut used: HashSet<(EntityId, Vec<RelationId>)> = HashSet::new();
    for qi in 0..total {
        let hops = 1 + qi % cfg.max_hops;
        let mut accepted = false;
        for _attempt in 0..500 {
            let anchor = EntityId(rng.random_range(0..cfg.entities) as u32);
            // Random walk of `hops` steps along existing edges.
            let mut at = anchor;
            let mut link: Vec<RelationId> = Vec::with_capacity(hops);
            let mut walk_ok = true;
            for _ in 0..hops {
                let edges = kg.out_edges(at)?;
                if edges.is_empty() {
                    walk_ok = false;
                    break;
                }
                let mut rels: Vec<RelationId> = edges.iter().map(|(r, _)| *r).collect();
                rels.dedup();
                let r = rels[rng.random_range(0..rels.len())];
                let tails: Vec<EntityId> =
                    edges.iter().filter(|(er, _)| *er == r).map(|(_, t)| *t).collect();
                at = tails[rng.random_range(0..tails.len())];
                link.push(r);
            }
            if !walk_ok || used.contains(&(anchor, link.clone())) {
                continue;
            }
            let rlink = RelationLink::new(link.clone())?;
            let paths = kg.instantiate_paths(anchor, &rlink, usize::MAX)?;
            let mut gold: Vec<String> = Vec::new();
            for p in &paths {
                let label = kg.entity_label(p.terminal())?.to_string();
                if !gold.contains(&label) {
                    gold.push(label);
                }
            }
            if gold.is_empty() {
                continue;
            }
            let link_positions: Vec<usize> = link.iter().map(|r| relation_pos[r]).collect();
            let text = question_text(&relation_phrases, &link_positions, &entity_labels[anchor.0 as usize]);
            let question = Question {
                text,
                anchors: vec![anchor],
                gold_answers: gold,
                gold_hops: Some(hops),
            };
            // Accept only when the gold link outranks everything else the
            // lexical scorer sees at this depth, so the benchmark is
            // answerable through the production retrieval route.
            let candidates = kg.enumerate_relation_links(anchor, hops)?;
            let ranked = score_links(&question, &candidates, &OverlapScorer, &kg)?;
            if ranked[0].link != rlink {
                continue;
            }
            used.insert((anchor, link));
            questions.push(question);
            accepted = true;
            break;
        }
        if !accepted {
            return Err(HarnessError::UnsatisfiableSynth {
                detail: format!("could not place question {qi} (hops {}): graph too small or too uniform", 1 + qi % cfg.max_hops),
            });
        }
    }

    let test = questions.split_off(cfg.train_questions);
    Ok(SynthData { kg, train: questions, test })
}

impl SynthData {
    /// Write `kg.tsv`, `train.jsonl` and `test.jsonl` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<SynthPaths, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.display().to_string(), source: e })?;
        let kg_path = dir.join("kg.tsv");
        let mut kg_file = std::fs::File::create(&kg_path)
            .map_err(|e| HarnessError::Io { path: kg_path.display().to_string(), source: e })?;
        self.kg.write_triples(&mut kg_file)?;

        let write_questions = |path: &Path, questions: &[Question]| -> Result<(), HarnessError> {
            let mut f = std::fs::File::create(path)
                .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
            for q in questions {
                let anchors: Vec<&str> = q
                    .anchors
                    .iter()
                    .map(|a| self.kg.entity_label(*a))
                    .collect::<Result<_, _>>()?;
                let record = serde_json::json!({
                    "text": q.text,
                    "anchors": anchors,
                    "answers": q.gold_answers,
                    "hops": q.gold_hops,
                });
                writeln!(f, "{record}").map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
            }
            Ok(())
        };
        let train_path = dir.join("train.jsonl");
        let test_path = dir.join("test.jsonl");
        write_questions(&train_path, &self.train)?;
        write_questions(&test_path, &self.test)?;
        Ok(SynthPaths { kg: kg_path, train: train_path, test: test_path })
    }
}

/// Pretraining corpus for the generation backend.
///
/// Two kinds of lines: packed triples (vocabulary and label co-occurrence
/// coverage for every entity and relation) and question/answer lines laid
/// out exactly like evaluation prompts, with the graph slot holding the
/// terminal entities of the paths the production retrieval route would
/// fetch. The backend thereby learns to read answers out of the graph
/// region before it is ever frozen.
pub fn build_pretrain_corpus(
    kg: &KnowledgeGraph,
    train: &[Question],
    template: &PromptTemplate,
    cfg: &TrainConfig,
) -> Result<Vec<String>, HarnessError> {
    let mut corpus = Vec::new();
    let mut line = String::new();
    for (i, t) in kg.triples().iter().enumerate() {
        if !line.is_empty() {
            line.push_str(" ; ");
        }
        line.push_str(&format!(
            "{} {} {}",
            kg.entity_label(t.head)?,
            kg.relation_label(t.relation)?,
            kg.entity_label(t.tail)?
        ));
        if (i + 1) % 8 == 0 {
            corpus.push(std::mem::take(&mut line));
        }
    }
    if !line.is_empty() {
        corpus.push(line);
    }

    for q in train {
        let hops = q.gold_hops.ok_or_else(|| HarnessError::QuestionWithoutHops(q.text.clone()))?;
        let (_, paths) = retrieve_paths(kg, q, hops, &OverlapScorer, cfg.k, cfg.path_cap)?;
        if paths.is_empty() {
            continue;
        }
        let hints: Vec<String> = paths
            .iter()
            .map(|p| kg.entity_label(p.terminal()).map(str::to_string))
            .collect::<Result<_, _>>()?;
        let answer = hints[0].clone();
        let rendered = template.render_text(&q.text, &hints.join(" "));
        corpus.push(format!("{rendered} {answer}"));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::load_questions_jsonl;
    use std::io::Cursor;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig { seed, entities: 20, relations: 6, train_questions: 12, test_questions: 4, max_hops: 2 }
    }

    #[test]
    fn answers_are_reachable_via_brute_force_enumeration() {
        let data = generate(&small_cfg(1)).unwrap();
        for q in data.train.iter().chain(&data.test) {
            let hops = q.gold_hops.unwrap();
            // Brute-force every path from the anchor and check that each
            // gold answer is some path's terminal.
            let mut frontier = vec![(q.anchors[0], Vec::<RelationId>::new())];
            let mut terminals: Vec<(Vec<RelationId>, EntityId)> = Vec::new();
            for _ in 0..hops {
                let mut next = Vec::new();
                for (at, link) in &frontier {
                    for t in data.kg.triples() {
                        if t.head == *at {
                            let mut l = link.clone();
                            l.push(t.relation);
                            terminals.push((l.clone(), t.tail));
                            next.push((t.tail, l));
                        }
                    }
                }
                frontier = next;
            }
            for gold in &q.gold_answers {
                let reachable = terminals.iter().any(|(l, term)| {
                    l.len() == hops && data.kg.entity_label(*term).unwrap() == gold
                });
                assert!(reachable, "gold `{gold}` unreachable for `{}`", q.text);
            }
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let d1 = dir.path().join("one");
        let d2 = dir.path().join("two");
        generate(&small_cfg(7)).unwrap().write(&d1).unwrap();
        generate(&small_cfg(7)).unwrap().write(&d2).unwrap();
        for name in ["kg.tsv", "train.jsonl", "test.jsonl"] {
            let a = std::fs::read(d1.join(name)).unwrap();
            let b = std::fs::read(d2.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
            assert!(!a.is_empty());
        }
        let d3 = dir.path().join("three");
        generate(&small_cfg(8)).unwrap().write(&d3).unwrap();
        assert_ne!(
            std::fs::read(d1.join("train.jsonl")).unwrap(),
            std::fs::read(d3.join("train.jsonl")).unwrap(),
            "different seeds should differ"
        );
    }

    #[test]
    fn hop_histogram_covers_every_class() {
        let data = generate(&small_cfg(3)).unwrap();
        let mut seen = vec![0usize; 3];
        for q in data.train.iter().chain(&data.test) {
            seen[q.gold_hops.unwrap()] += 1;
        }
        assert!(seen[1] > 0 && seen[2] > 0, "histogram {seen:?}");
    }

    #[test]
    fn written_files_load_back_through_the_public_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&small_cfg(5)).unwrap();
        let paths = data.write(dir.path()).unwrap();
        let kg_text = std::fs::read_to_string(&paths.kg).unwrap();
        let kg = KnowledgeGraph::load_triples(Cursor::new(kg_text)).unwrap();
        assert_eq!(kg.triple_count(), data.kg.triple_count());
        let train_text = std::fs::read_to_string(&paths.train).unwrap();
        let train = load_questions_jsonl(Cursor::new(train_text), &kg).unwrap();
        assert_eq!(train.len(), data.train.len());
        assert_eq!(train[0].text, data.train[0].text);
    }

    #[test]
    fn bad_sizes_are_rejected() {
        let mut cfg = small_cfg(0);
        cfg.max_hops = 3;
        assert!(matches!(generate(&cfg), Err(HarnessError::UnsatisfiableSynth { .. })));
        let mut cfg = small_cfg(0);
        cfg.relations = KEYS.len() + 1;
        assert!(generate(&cfg).is_err());
        let mut cfg = small_cfg(0);
        cfg.entities = 2;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn four_hop_generation_works() {
        let cfg = SynthConfig { seed: 2, entities: 24, relations: 8, train_questions: 8, test_questions: 4, max_hops: 4 };
        let data = generate(&cfg).unwrap();
        let max = data.train.iter().chain(&data.test).map(|q| q.gold_hops.unwrap()).max().unwrap();
        assert_eq!(max, 4);
    }

    #[test]
    fn corpus_contains_triples_and_qa_lines() {
        let data = generate(&small_cfg(4)).unwrap();
        let template = PromptTemplate::default_template();
        let cfg = TrainConfig::default();
        let corpus = build_pretrain_corpus(&data.kg, &data.train, &template, &cfg).unwrap();
        assert!(corpus.len() > data.train.len());
        let qa_lines = corpus.iter().filter(|l| l.contains("question:")).count();
        assert_eq!(qa_lines, data.train.len());
        // Every QA line ends with one of that question's gold answers.
        for q in &data.train {
            let line = corpus.iter().find(|l| l.contains(&q.text)).unwrap();
            let last = line.split_whitespace().last().unwrap();
            assert!(q.gold_answers.iter().any(|g| g == last), "line `{line}`");
        }
    }
}
