//! Synthetic corpora and simulated model backends shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use narrative_deid::corpus::{Corpus, GoldAnnotation, Narrative};
use narrative_deid::gateway::{self, ChatBackend, ChatRequest, FixtureEntry, Gateway, GatewayError};
use narrative_deid::PiiCategory;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub const CRASH_NARRATIVE: &str = "UNIT 1 HIT THE DRIVEWAY OF 4647 HIGHWAY 47. NO INJURIES.";
pub const CRASH_SITE: &str = "4647 HIGHWAY 47";
pub const CRASH_EVIDENCE: &str = "UNIT 1 HIT THE DRIVEWAY OF 4647 HIGHWAY 47.";
pub const CRASH_REASON: &str = "Crash location address, not a true residence/mailing address of a person.";

pub fn crash_site_review_json() -> String {
    json!({
        "home_address_reviews": [{
            "text": CRASH_SITE,
            "decision": "DROP",
            "reason": CRASH_REASON,
            "evidence": CRASH_EVIDENCE,
        }],
        "alphanumeric_reviews": []
    })
    .to_string()
}

/// Mock fixtures for the crash-site narrative: every extraction run tags the
/// crash-site address, and the verifier drops it.
pub fn crash_site_fixtures() -> Vec<FixtureEntry> {
    let extraction = gateway::build_extraction_prompt(CRASH_NARRATIVE).unwrap();
    let tagged = CRASH_NARRATIVE.replace(CRASH_SITE, &format!("$$${CRASH_SITE}$$$"));
    let verifier = gateway::build_verifier_prompt(CRASH_NARRATIVE, &[CRASH_SITE.to_string()], &[]).unwrap();
    vec![
        FixtureEntry::new(&extraction, tagged),
        FixtureEntry::new(&verifier, crash_site_review_json()),
    ]
}

pub fn fnv(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seg {
    pub text: String,
    pub category: Option<PiiCategory>,
    /// False for look-alikes (crash sites, road references).
    pub pii: bool,
}

impl Seg {
    fn plain(text: &str) -> Self {
        Seg {
            text: text.to_string(),
            category: None,
            pii: false,
        }
    }

    fn pii(category: PiiCategory, text: String, pii: bool) -> Self {
        Seg {
            text,
            category: Some(category),
            pii,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthNarrative {
    pub id: String,
    pub sentences: Vec<Vec<Seg>>,
}

impl SynthNarrative {
    pub fn segs(&self) -> impl Iterator<Item = &Seg> {
        self.sentences.iter().flatten()
    }

    pub fn text(&self) -> String {
        self.render(|_| None)
    }

    /// The narrative with each segment wrapped in the delimiters of the
    /// category `tag` returns for it.
    pub fn render(&self, mut tag: impl FnMut(&Seg) -> Option<PiiCategory>) -> String {
        let sentences: Vec<String> = self
            .sentences
            .iter()
            .map(|s| {
                s.iter()
                    .map(|seg| match tag(seg) {
                        Some(cat) => format!("{d}{}{d}", seg.text, d = cat.delimiter()),
                        None => seg.text.clone(),
                    })
                    .collect()
            })
            .collect();
        sentences.join(" ")
    }

    pub fn narrative(&self) -> Narrative {
        Narrative::new(self.id.clone(), self.text())
    }

    pub fn gold(&self) -> Vec<GoldAnnotation> {
        self.segs()
            .filter(|s| s.pii)
            .map(|s| GoldAnnotation::new(self.id.clone(), s.category.unwrap(), s.text.clone()))
            .collect()
    }

    pub fn sentence_with(&self, surface: &str) -> Option<String> {
        self.sentences
            .iter()
            .map(|s| s.iter().map(|seg| seg.text.as_str()).collect::<String>())
            .find(|s| s.contains(surface))
    }

    pub fn truth(&self, category: PiiCategory, surface: &str) -> Option<bool> {
        self.segs()
            .find(|s| s.category == Some(category) && s.text == surface)
            .map(|s| s.pii)
    }
}

const FIRST: [&str; 8] = ["JOHN", "MARIA", "DAVID", "LINDA", "JAMES", "SARAH", "KEVIN", "ANA"];
const LAST: [&str; 8] = ["SMITH", "NGUYEN", "KOWALSKI", "GARCIA", "OLSON", "BROWN", "MILLER", "JOHNSON"];
const STREETS: [&str; 6] = ["MAIN ST", "OAK AVE", "HIGHWAY 47", "ELM DR", "CTH K", "PINE RD"];
const ROADS: [&str; 5] = ["STH 33", "US-12", "I-94", "CTH PD", "USH 51"];
const DOMAINS: [&str; 4] = ["gmail.com", "yahoo.com", "dot.wi.gov", "example.org"];

fn phone(rng: &mut ChaCha8Rng) -> String {
    let a = rng.gen_range(200..1000);
    let x = rng.gen_range(200..1000);
    let n = rng.gen_range(0..10000);
    match rng.gen_range(0..5) {
        0 => format!("{a}-{x}-{n:04}"),
        1 => format!("{a}.{x}.{n:04}"),
        2 => format!("{a} {x} {n:04}"),
        3 => format!("({a}) {x}-{n:04}"),
        _ => format!("{a}{x}{n:04}"),
    }
}

fn pick(rng: &mut ChaCha8Rng, xs: &[&str]) -> String {
    xs.choose(rng).unwrap().to_string()
}

fn sentence(rng: &mut ChaCha8Rng, kind: usize) -> Vec<Seg> {
    use PiiCategory::*;
    match kind {
        0 => {
            let n = format!("{} {}", pick(rng, &FIRST), pick(rng, &LAST));
            vec![Seg::plain("DRIVER "), Seg::pii(Name, n, true), Seg::plain(" STATED SHE WAS NORTHBOUND.")]
        }
        1 => {
            let n = format!("{} {}", pick(rng, &FIRST), pick(rng, &LAST));
            let p = phone(rng);
            vec![Seg::pii(Name, n, true), Seg::plain(" CAN BE REACHED AT "), Seg::pii(Phone, p, true), Seg::plain(".")]
        }
        2 => {
            let user = format!("{}{}", pick(rng, &FIRST).to_lowercase(), rng.gen_range(1..99));
            let e = format!("{user}@{}", pick(rng, &DOMAINS));
            vec![Seg::plain("EMAIL ON FILE IS "), Seg::pii(Email, e, true), Seg::plain(".")]
        }
        3 => {
            let a = format!("{} {}", rng.gen_range(100..10000), pick(rng, &STREETS));
            vec![Seg::plain("DRIVER RESIDES AT "), Seg::pii(HomeAddress, a, true), Seg::plain(".")]
        }
        4 => {
            let a = format!("{} {}", rng.gen_range(100..10000), pick(rng, &STREETS));
            vec![Seg::plain("UNIT 1 HIT THE DRIVEWAY OF "), Seg::pii(HomeAddress, a, false), Seg::plain(".")]
        }
        5 => {
            let letters: String = (0..3).map(|_| rng.gen_range(b'A'..=b'Z') as char).collect();
            let id = format!("{letters}{:04}", rng.gen_range(0..10000));
            vec![Seg::plain("PLATE "), Seg::pii(Alphanumeric, id, true), Seg::plain(" WAS RECORDED.")]
        }
        6 => {
            let r = pick(rng, &ROADS);
            vec![Seg::plain("VEHICLE LEFT THE ROADWAY ON "), Seg::pii(Alphanumeric, r, false), Seg::plain(".")]
        }
        _ => vec![Seg::plain(["NO INJURIES WERE REPORTED.", "UNIT 2 WAS PARKED."][rng.gen_range(0..2)])],
    }
}

/// `n` narratives of 2 to 6 sentences. Surfaces within a narrative never
/// contain one another, so each has a single unambiguous occurrence.
pub fn synth_corpus(n: usize, seed: u64) -> Vec<SynthNarrative> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut sentences: Vec<Vec<Seg>> = Vec::new();
            let want = rng.gen_range(2..=6);
            while sentences.len() < want {
                let kind = rng.gen_range(0..8);
                let s = sentence(&mut rng, kind);
                let taken: Vec<String> = sentences.iter().flatten().filter(|g| g.category.is_some()).map(|g| g.text.clone()).collect();
                let clash = s.iter().filter(|g| g.category.is_some()).any(|g| {
                    taken.iter().any(|t| t.contains(&g.text) || g.text.contains(t.as_str()))
                        || sentences.iter().flatten().any(|p| p.category.is_none() && p.text.contains(&g.text))
                });
                if !clash {
                    sentences.push(s);
                }
            }
            SynthNarrative {
                id: format!("n{i:04}"),
                sentences,
            }
        })
        .collect()
}

pub fn corpus_of(world: &[SynthNarrative]) -> Corpus {
    let mut corpus = Corpus::new(world.iter().map(SynthNarrative::narrative).collect()).unwrap();
    corpus.attach_gold(world.iter().flat_map(SynthNarrative::gold).collect()).unwrap();
    corpus
}

/// A stand-in for both model roles, answering from the synthetic ground
/// truth with seeded noise.
pub struct SimModel {
    world: HashMap<String, SynthNarrative>,
}

impl SimModel {
    pub fn new(world: &[SynthNarrative]) -> Self {
        SimModel {
            world: world.iter().map(|n| (n.text(), n.clone())).collect(),
        }
    }

    fn extract(&self, text: &str, seed: Option<u64>) -> Result<String, GatewayError> {
        let n = self.world.get(text).ok_or_else(|| GatewayError::BadResponse("unknown narrative".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv(text) ^ seed.unwrap_or(u64::MAX).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let tagged = n.render(|seg| {
            let roll: f64 = rng.gen();
            match seg.category? {
                PiiCategory::Name => (roll < 0.95).then_some(PiiCategory::Name),
                // The model sometimes tags rule-owned strings, occasionally
                // under the wrong category.
                PiiCategory::Phone if roll < 0.1 => Some(PiiCategory::Alphanumeric),
                PiiCategory::Phone => (roll < 0.6).then_some(PiiCategory::Phone),
                PiiCategory::Email => (roll < 0.5).then_some(PiiCategory::Email),
                PiiCategory::HomeAddress => (roll < 0.7).then_some(PiiCategory::HomeAddress),
                PiiCategory::Alphanumeric => (roll < 0.6).then_some(PiiCategory::Alphanumeric),
            }
        });
        if rng.gen_bool(0.05) {
            return Ok(tagged.replacen(' ', "  ", 1));
        }
        Ok(tagged)
    }

    fn verify(&self, user: &str) -> Result<String, GatewayError> {
        let (head, text) = user
            .split_once("\nnarrative:\n")
            .ok_or_else(|| GatewayError::BadResponse("no narrative".into()))?;
        let n = self.world.get(text).ok_or_else(|| GatewayError::BadResponse("unknown narrative".into()))?;
        let mut lists: BTreeMap<&str, Vec<String>> = BTreeMap::new();
        let mut current = "";
        for line in head.lines() {
            if let Some(label) = line.split(" (").next().filter(|_| line.ends_with("):")) {
                current = label;
                lists.entry(current).or_default();
            } else if let Some(rest) = line.strip_prefix('[').and_then(|l| l.split_once("] ")) {
                lists.entry(current).or_default().push(serde_json::from_str(rest.1).unwrap());
            }
        }
        let review = |cat: PiiCategory, surface: &String| {
            let h = fnv(surface);
            let sentence = n.sentence_with(surface).unwrap_or_default();
            let (decision, reason, evidence) = match n.truth(cat, surface) {
                _ if h.is_multiple_of(13) => ("UNCERTAIN", "context is insufficient", String::new()),
                Some(true) if h.is_multiple_of(17) => ("KEEP", "belongs to a person", "NOT IN THE NARRATIVE".to_string()),
                Some(true) => ("KEEP", "belongs to a person", sentence),
                Some(false) => ("DROP", "describes the crash scene, not a person", sentence),
                None => ("UNCERTAIN", "cannot tell", String::new()),
            };
            json!({"text": surface, "decision": decision, "reason": reason, "evidence": evidence})
        };
        let reviews = |label: &str, cat| lists.get(label).map(|l| l.iter().map(|s| review(cat, s)).collect::<Vec<_>>()).unwrap_or_default();
        Ok(json!({
            "home_address_reviews": reviews("home_address_candidates", PiiCategory::HomeAddress),
            "alphanumeric_reviews": reviews("alphanumeric_candidates", PiiCategory::Alphanumeric),
        })
        .to_string())
    }
}

impl ChatBackend for SimModel {
    fn backend_id(&self) -> &str {
        "sim_model"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if request.system_prompt == gateway::EXTRACTION_SYSTEM_PROMPT {
            self.extract(&request.user_content, request.seed)
        } else {
            self.verify(&request.user_content)
        }
    }
}

/// Passes requests through and records each exchange as a fixture entry.
pub struct Recorder {
    inner: Arc<dyn ChatBackend>,
    seen: Mutex<BTreeMap<(String, Option<u64>), String>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Arc<Self> {
        Arc::new(Recorder {
            inner,
            seen: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.seen
            .lock()
            .unwrap()
            .iter()
            .map(|((key, seed), response)| FixtureEntry {
                key: key.clone(),
                response: response.clone(),
                seed: *seed,
            })
            .collect()
    }

    pub fn write(&self, path: &Path) {
        gateway::write_fixtures(path, &self.entries()).unwrap();
    }
}

impl ChatBackend for Recorder {
    fn backend_id(&self) -> &str {
        "scripted_mock"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let out = self.inner.complete(request)?;
        self.seen
            .lock()
            .unwrap()
            .insert((request.fixture_key(), request.seed), out.clone());
        Ok(out)
    }
}

/// Gateway over a recording simulated model.
pub fn sim_gateway(world: &[SynthNarrative]) -> (Gateway, Arc<Recorder>) {
    let recorder = Recorder::new(Arc::new(SimModel::new(world)));
    (Gateway::new(recorder.clone(), 4), recorder)
}
