use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::catalog::{clock_quadrant, histology_catalog, is_hepatocellular, site_catalog, Organ, SiteEntry, Subsite, CLOCK_POSITIONS};
use super::templates::{entailed_label, header_count, render, variant_count, filler_count, Detail, Fact, Location};
use super::{
    AliasLexicon, AttributeKind, ClinicalDocument, CorpusBundle, DocKind, EvidenceSpan, GeneratorConfig, LabelSpace,
    Patient, PoolDocument, RegistryRecord, NOT_DOCUMENTED,
};
use crate::error::Result;

/// One rendered sentence with the fact it was rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSentence {
    pub fact: Fact,
    pub variant: u8,
    pub char_start: usize,
    pub char_end: usize,
    /// Attributes this sentence is registry evidence for.
    pub evidence: Vec<AttributeKind>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocTrace {
    pub doc_id: String,
    pub sentences: Vec<PlantedSentence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientTrace {
    pub patient_id: String,
    pub cross_doc: bool,
    pub compound: bool,
    pub resection_day: Option<i64>,
    pub documents: Vec<DocTrace>,
}

impl PatientTrace {
    pub fn doc(&self, doc_id: &str) -> Option<&DocTrace> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// Label entailed by all facts in the given documents.
    pub fn entailed_by(&self, attribute: AttributeKind, doc_ids: &[&str]) -> Option<String> {
        let facts: Vec<&Fact> = self
            .documents
            .iter()
            .filter(|d| doc_ids.contains(&d.doc_id.as_str()))
            .flat_map(|d| d.sentences.iter().map(|s| &s.fact))
            .collect();
        entailed_label(attribute, &facts)
    }
}

/// Generator-side record of what every sentence means; kept in memory only.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CorpusTrace {
    pub patients: Vec<PatientTrace>,
}

impl CorpusTrace {
    pub fn patient(&self, patient_id: &str) -> Option<&PatientTrace> {
        self.patients.iter().find(|p| p.patient_id == patient_id)
    }
}

const T_CLASSES: [&str; 6] = ["Tis", "T0", "T1", "T2", "T3", "T4"];
const T_WEIGHTS: [f64; 6] = [0.05, 0.02, 0.30, 0.30, 0.20, 0.13];

fn label_spaces(config: &GeneratorConfig) -> Vec<LabelSpace> {
    let nd = || NOT_DOCUMENTED.to_string();
    let with_nd = |mut v: Vec<String>| {
        v.push(nd());
        v
    };
    AttributeKind::ALL
        .into_iter()
        .map(|attribute| {
            let classes = match attribute {
                AttributeKind::Site => with_nd(
                    site_catalog()[..config.n_site_classes]
                        .iter()
                        .map(|s| s.code.to_string())
                        .collect(),
                ),
                AttributeKind::Histology => with_nd(
                    histology_catalog()[..config.n_histology_classes]
                        .iter()
                        .map(|h| h.code.to_string())
                        .collect(),
                ),
                AttributeKind::ClinicalT | AttributeKind::PathT => {
                    with_nd(T_CLASSES.iter().map(|s| s.to_string()).collect())
                }
                AttributeKind::ClinicalN | AttributeKind::PathN => with_nd(vec!["N0".into(), "N1+".into()]),
                AttributeKind::ClinicalM | AttributeKind::PathM => with_nd(vec!["M0".into(), "M1".into()]),
            };
            LabelSpace { attribute, classes }
        })
        .collect()
}

fn lexicon(spaces: &[LabelSpace]) -> AliasLexicon {
    let mut lex = AliasLexicon::new();
    for space in spaces {
        let mut map = BTreeMap::new();
        for code in &space.classes {
            let aliases: Vec<String> = match space.attribute {
                _ if code == NOT_DOCUMENTED => vec!["not documented".into()],
                AttributeKind::Site => site_catalog()
                    .iter()
                    .find(|s| s.code == code)
                    .map(|s| s.aliases.iter().map(|a| a.to_string()).collect())
                    .unwrap_or_default(),
                AttributeKind::Histology => histology_catalog()
                    .iter()
                    .find(|h| h.code == code)
                    .map(|h| h.names.iter().map(|a| a.to_lowercase()).collect())
                    .unwrap_or_default(),
                a => {
                    let clinical = matches!(a, AttributeKind::ClinicalT | AttributeKind::ClinicalN | AttributeKind::ClinicalM);
                    let p = if clinical { "c" } else { "p" };
                    let c = code.to_lowercase();
                    match c.as_str() {
                        "n1+" => vec![format!("{p}n1"), format!("{p}n2"), format!("{p}n3")],
                        _ => vec![format!("{p}{c}")],
                    }
                }
            };
            map.insert(code.clone(), aliases);
        }
        lex.insert(space.attribute, map);
    }
    lex
}

fn weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn sample_t<R: Rng>(rng: &mut R) -> String {
    T_CLASSES[weighted(rng, &T_WEIGHTS)].to_string()
}

fn sentence_budget<R: Rng>(rng: &mut R) -> usize {
    let u: f64 = rng.random();
    5 + (35.0 * u.powi(4)).floor() as usize
}

/// A location inside a site, at randomly chosen granularity.
fn tumor_location<R: Rng>(rng: &mut R, site: &SiteEntry) -> Location {
    let organ = site.organ;
    match site.subsite {
        Subsite::Quadrant { upper, outer } => {
            let left = rng.random_bool(0.5);
            if rng.random_bool(0.6) {
                let clocks: Vec<u8> = CLOCK_POSITIONS
                    .into_iter()
                    .filter(|&c| clock_quadrant(left, c) == (upper, outer))
                    .collect();
                Location {
                    organ,
                    left: Some(left),
                    detail: Detail::Clock(*clocks.choose(rng).expect("each quadrant has clocks")),
                }
            } else {
                Location {
                    organ,
                    left: Some(left),
                    detail: Detail::Quadrant { upper, outer },
                }
            }
        }
        Subsite::Lobe(l) => Location {
            organ,
            left: Some(if l == 1 { false } else { rng.random_bool(0.5) }),
            detail: Detail::Lobe(l),
        },
        Subsite::Phrase(bank) => Location {
            organ,
            left: organ.lateral().then(|| rng.random_bool(0.5)),
            detail: Detail::Phrase {
                // liver sites share one phrase bank so text never reveals the subsite
                code: if organ == Organ::Liver { "C22.0" } else { site.code },
                variant: rng.random_range(0..bank.len()) as u8,
            },
        },
    }
}

/// A lesion location in the same organ as `tumor` that resolves elsewhere.
fn sibling_location<R: Rng>(rng: &mut R, tumor: &Location) -> Option<Location> {
    match &tumor.detail {
        Detail::Clock(c) => {
            let left = tumor.left?;
            let q = clock_quadrant(left, *c);
            let others: Vec<u8> = CLOCK_POSITIONS
                .into_iter()
                .filter(|&o| clock_quadrant(left, o) != q)
                .collect();
            Some(Location {
                detail: Detail::Clock(*others.choose(rng)?),
                ..tumor.clone()
            })
        }
        Detail::Quadrant { upper, outer } => {
            let mut opts = vec![(!upper, *outer), (*upper, !outer), (!upper, !outer)];
            opts.shuffle(rng);
            let (u, o) = opts[0];
            Some(Location {
                detail: Detail::Quadrant { upper: u, outer: o },
                ..tumor.clone()
            })
        }
        Detail::Lobe(l) => {
            let left = tumor.left?;
            let lobes: Vec<u8> = if left { vec![0, 2] } else { vec![0, 1, 2] };
            let others: Vec<u8> = lobes.into_iter().filter(|x| x != l).collect();
            Some(Location {
                detail: Detail::Lobe(*others.choose(rng)?),
                ..tumor.clone()
            })
        }
        _ => None,
    }
}

/// Somewhere unrelated to the primary: the other side, another subsite, or another organ.
fn distractor_location<R: Rng>(rng: &mut R, tumor: &Location) -> Location {
    let roll: f64 = rng.random();
    if roll < 0.35 {
        if let Some(l) = sibling_location(rng, tumor) {
            return l;
        }
    }
    if roll < 0.6 && tumor.left.is_some() {
        return Location {
            organ: tumor.organ,
            left: tumor.left.map(|l| !l),
            detail: Detail::Organ,
        };
    }
    let other = site_catalog()
        .iter()
        .filter(|s| s.organ != tumor.organ)
        .collect::<Vec<_>>()
        .choose(rng)
        .copied()
        .expect("catalog has several organs");
    random_location(rng, other)
}

fn random_location<R: Rng>(rng: &mut R, site: &SiteEntry) -> Location {
    let mut loc = tumor_location(rng, site);
    if rng.random_bool(0.3) {
        loc.detail = Detail::Organ;
    }
    loc
}

struct DocDraft {
    kind: DocKind,
    date: i64,
    facts: Vec<(Fact, Vec<AttributeKind>)>,
}

impl DocDraft {
    fn new(kind: DocKind, date: i64) -> Self {
        Self {
            kind,
            date,
            facts: Vec::new(),
        }
    }

    fn plant(&mut self, fact: Fact, evidence: &[AttributeKind]) {
        self.facts.push((fact, evidence.to_vec()));
    }
}

fn paraphrase<R: Rng>(rng: &mut R, fact: &Fact, variation_rate: f64) -> u8 {
    let n = variant_count(fact);
    if n <= 1 {
        0
    } else if rng.random_bool(variation_rate) {
        rng.random_range(0..n)
    } else if n == 6 {
        // canonical wording; location phrasing still alternates
        3 * rng.random_range(0..2)
    } else {
        0
    }
}

fn render_document<R: Rng>(
    rng: &mut R,
    draft: DocDraft,
    config: &GeneratorConfig,
    doc_id: String,
    patient_id: &str,
) -> (ClinicalDocument, DocTrace) {
    let kind = draft.kind;
    let budget = sentence_budget(rng).max(draft.facts.len() + 2);
    let n_filler = budget - 1 - draft.facts.len();
    let mut order: Vec<usize> = (0..filler_count(kind)).collect();
    order.shuffle(rng);
    let mut body: Vec<(Fact, Vec<AttributeKind>)> = (0..n_filler)
        .map(|i| {
            let idx = if i < order.len() {
                order[i]
            } else {
                rng.random_range(0..filler_count(kind))
            };
            (Fact::Filler(kind, idx as u8), Vec::new())
        })
        .collect();
    for planted in draft.facts {
        let at = rng.random_range(0..=body.len());
        body.insert(at, planted);
    }
    let header = Fact::Header(kind, rng.random_range(0..header_count(kind)) as u8);
    let mut text = String::new();
    let mut sentences = Vec::with_capacity(body.len() + 1);
    for (i, (fact, evidence)) in std::iter::once((header, Vec::new())).chain(body).enumerate() {
        let variant = paraphrase(rng, &fact, config.variation_rate);
        let s = render(&fact, variant);
        if i == 1 {
            text.push('\n');
        } else if i > 1 {
            text.push_str(match rng.random_range(0..20) {
                0 => "\n",
                1 => "  ",
                _ => " ",
            });
        }
        let start = text.len();
        text.push_str(&s);
        sentences.push(PlantedSentence {
            fact,
            variant,
            char_start: start,
            char_end: text.len(),
            evidence,
        });
    }
    let doc = ClinicalDocument {
        doc_id: doc_id.clone(),
        patient_id: patient_id.to_string(),
        kind,
        date: draft.date,
        text,
    };
    (doc, DocTrace { doc_id, sentences })
}

struct CancerPlan<'a> {
    site: &'a SiteEntry,
    histology: &'static str,
    labels: BTreeMap<AttributeKind, String>,
    cross_doc: bool,
    compound: bool,
    resection_day: Option<i64>,
    diagnosis: i64,
}

fn pick_histology<R: Rng>(rng: &mut R, site: &SiteEntry, n_hist: usize) -> &'static str {
    let compatible: Vec<&'static str> = histology_catalog()[..n_hist]
        .iter()
        .filter(|h| h.organs.contains(&site.organ))
        .filter(|h| match site.code {
            "C22.0" => is_hepatocellular(h.code),
            "C22.1" => !is_hepatocellular(h.code),
            _ => true,
        })
        .map(|h| h.code)
        .collect();
    if compatible.is_empty() {
        // a truncated histology space may not cover every organ; fall back to NOS
        return histology_catalog()[0].code;
    }
    if compatible.len() == 1 || rng.random_bool(0.55) {
        compatible[0]
    } else {
        compatible[rng.random_range(1..compatible.len())]
    }
}

fn cancer_patient<R: Rng>(rng: &mut R, config: &GeneratorConfig, patient_id: &str) -> (Patient, PatientTrace) {
    use AttributeKind::*;
    let sites = &site_catalog()[..config.n_site_classes];
    let site = &sites[rng.random_range(0..sites.len())];
    let histology = pick_histology(rng, site, config.n_histology_classes);
    let (hmin, hmax) = config.pre_diagnosis_history_days;
    let diagnosis = hmax + rng.random_range(30..=1200);
    let cross_doc = rng.random_bool(config.cross_doc_fraction);
    let can_compound = matches!(site.organ, Organ::Breast | Organ::Lung);
    let compound = cross_doc && can_compound && rng.random_bool(config.compound_finding_rate);

    let mut labels = BTreeMap::new();
    labels.insert(Site, site.code.to_string());
    labels.insert(Histology, histology.to_string());
    let clinical_documented = !rng.random_bool(config.clinical_undocumented_rate);
    let (ct, cn, cm) = if clinical_documented {
        (
            sample_t(rng),
            if rng.random_bool(0.6) { "N0" } else { "N1+" }.to_string(),
            if rng.random_bool(0.85) { "M0" } else { "M1" }.to_string(),
        )
    } else {
        (NOT_DOCUMENTED.into(), NOT_DOCUMENTED.into(), NOT_DOCUMENTED.into())
    };
    labels.insert(ClinicalT, ct.clone());
    labels.insert(ClinicalN, cn.clone());
    labels.insert(ClinicalM, cm.clone());
    let resected = rng.random_bool(config.resection_rate);
    let resection_day = resected.then(|| {
        if rng.random_bool(config.resection_late_fraction) {
            diagnosis + rng.random_range(31..=90)
        } else {
            diagnosis + rng.random_range(7..=30)
        }
    });
    if resected {
        let pt = if ct != NOT_DOCUMENTED && rng.random_bool(0.7) { ct.clone() } else { sample_t(rng) };
        let pn = if rng.random_bool(0.6) { "N0" } else { "N1+" };
        let pm = if rng.random_bool(0.7) {
            if cm == "M1" || rng.random_bool(0.1) { "M1" } else { "M0" }
        } else {
            NOT_DOCUMENTED
        };
        labels.insert(PathT, pt);
        labels.insert(PathN, pn.to_string());
        labels.insert(PathM, pm.to_string());
    } else {
        for a in [PathT, PathN, PathM] {
            labels.insert(a, NOT_DOCUMENTED.to_string());
        }
    }
    let plan = CancerPlan {
        site,
        histology,
        labels,
        cross_doc,
        compound,
        resection_day,
        diagnosis,
    };
    let drafts = cancer_timeline(rng, config, &plan, hmin, hmax);
    assemble_patient(rng, config, patient_id, drafts, Some(plan))
}

fn cancer_timeline<R: Rng>(rng: &mut R, config: &GeneratorConfig, plan: &CancerPlan<'_>, hmin: i64, hmax: i64) -> Vec<DocDraft> {
    use AttributeKind::*;
    let d = plan.diagnosis;
    let tumor = tumor_location(rng, plan.site);
    let hist_name = u8::from(rng.random_bool(config.variation_rate));
    let mut docs = Vec::new();

    // diagnostic imaging
    let mut rad = DocDraft::new(DocKind::Radiology, d - rng.random_range(1..=25));
    let finding = if plan.compound {
        let benign = sibling_location(rng, &tumor).expect("breast and lung have sibling subsites");
        Fact::Compound {
            benign,
            suspicious: tumor.clone(),
            suspicious_first: rng.random_bool(0.5),
        }
    } else {
        Fact::Suspicious(tumor.clone())
    };
    rad.plant(finding, &[Site]);
    add_distractors(rng, config, &mut rad, &tumor);
    docs.push(rad);

    // tissue diagnosis
    let mut path = DocDraft::new(DocKind::Pathology, d);
    path.plant(
        Fact::Malignancy {
            histology: plan.histology,
            name: hist_name,
            location: (!plan.cross_doc).then(|| tumor.clone()),
            resection: false,
        },
        &[Site, Histology],
    );
    if rng.random_bool(config.negation_rate) {
        let loc = distractor_location(rng, &tumor);
        path.plant(Fact::BenignTissue(loc), &[]);
    }
    docs.push(path);
    if rng.random_bool(0.3) {
        let mut op = DocDraft::new(DocKind::Operative, d);
        op.plant(procedure(plan, &tumor, false), &[]);
        docs.push(op);
    }

    // clinical staging
    let ct = &plan.labels[&ClinicalT];
    if ct != NOT_DOCUMENTED {
        let mut stage = DocDraft::new(DocKind::Radiology, d + rng.random_range(1..=14));
        stage.plant(
            Fact::Stage {
                clinical: true,
                t: Some(ct.clone()),
                n: Some(plan.labels[&ClinicalN].clone()),
                m: Some(plan.labels[&ClinicalM].clone()),
            },
            &[ClinicalT, ClinicalN, ClinicalM],
        );
        add_distractors(rng, config, &mut stage, &tumor);
        docs.push(stage);
    }

    // resection
    if let Some(day) = plan.resection_day {
        let mut op = DocDraft::new(DocKind::Operative, day);
        op.plant(procedure(plan, &tumor, true), &[]);
        docs.push(op);
        let mut rp = DocDraft::new(DocKind::Pathology, day);
        rp.plant(
            Fact::Malignancy {
                histology: plan.histology,
                name: hist_name,
                location: (!plan.cross_doc).then(|| tumor.clone()),
                resection: true,
            },
            &[Site, Histology],
        );
        let pm = &plan.labels[&PathM];
        rp.plant(
            Fact::Stage {
                clinical: false,
                t: Some(plan.labels[&PathT].clone()),
                n: Some(plan.labels[&PathN].clone()),
                m: (pm != NOT_DOCUMENTED).then(|| pm.clone()),
            },
            &[PathT, PathN, PathM],
        );
        docs.push(rp);
    }

    // pre-diagnostic history and follow-up up to the document budget
    let (lo, hi) = config.docs_per_patient;
    let target = rng.random_range(lo..=hi).max(docs.len());
    let extra = target - docs.len();
    let n_pre = (extra as f64 * 0.6).round() as usize;
    for _ in 0..n_pre {
        let date = d - rng.random_range(hmin..=hmax);
        docs.push(prediagnostic_doc(rng, config, plan, &tumor, date));
    }
    for _ in n_pre..extra {
        let mut f = DocDraft::new(DocKind::Radiology, d + rng.random_range(120..=700));
        f.plant(Fact::Surveillance, &[]);
        if rng.random_bool(config.negation_rate) {
            let loc = distractor_location(rng, &tumor);
            f.plant(Fact::Negated(loc), &[]);
        }
        docs.push(f);
    }
    docs
}

fn procedure(plan: &CancerPlan<'_>, tumor: &Location, resection: bool) -> Fact {
    // cross-document patients never get the organ named outside radiology
    let organ = (!plan.cross_doc).then_some(tumor.organ);
    Fact::Procedure {
        organ,
        left: organ.and(tumor.left),
        resection,
    }
}

fn add_distractors<R: Rng>(rng: &mut R, config: &GeneratorConfig, doc: &mut DocDraft, tumor: &Location) {
    for _ in 0..2 {
        if rng.random_bool(config.negation_rate) {
            let loc = distractor_location(rng, tumor);
            let fact = if rng.random_bool(0.6) { Fact::Negated(loc) } else { Fact::Benign(loc) };
            doc.plant(fact, &[]);
        }
    }
}

fn prediagnostic_doc<R: Rng>(rng: &mut R, config: &GeneratorConfig, plan: &CancerPlan<'_>, tumor: &Location, date: i64) -> DocDraft {
    let kind = *[DocKind::Radiology, DocKind::Radiology, DocKind::Pathology, DocKind::Operative]
        .choose(rng)
        .expect("non-empty");
    let mut doc = DocDraft::new(kind, date);
    if rng.random_bool(config.prediagnostic_suspicion_rate) {
        let fact = match kind {
            DocKind::Radiology if rng.random_bool(0.5) => Fact::Suspicious(tumor.clone()),
            DocKind::Pathology => Fact::Differential {
                histology: plan.histology,
                name: u8::from(rng.random_bool(config.variation_rate)),
                location: tumor.clone(),
            },
            _ => Fact::Atypia(tumor.clone()),
        };
        doc.plant(fact, &[]);
    } else {
        benign_content(rng, &mut doc, tumor);
    }
    if rng.random_bool(config.negation_rate) {
        let loc = distractor_location(rng, tumor);
        doc.plant(Fact::Negated(loc), &[]);
    }
    doc
}

fn benign_content<R: Rng>(rng: &mut R, doc: &mut DocDraft, near: &Location) {
    let loc = if rng.random_bool(0.5) {
        near.clone()
    } else {
        distractor_location(rng, near)
    };
    let fact = match doc.kind {
        DocKind::Pathology => Fact::BenignTissue(loc),
        DocKind::Radiology => {
            if rng.random_bool(0.5) {
                Fact::Benign(loc)
            } else {
                Fact::Negated(loc)
            }
        }
        DocKind::Operative => Fact::Procedure {
            organ: Some(loc.organ),
            left: loc.left,
            resection: false,
        },
    };
    doc.plant(fact, &[]);
}

fn control_patient<R: Rng>(rng: &mut R, config: &GeneratorConfig, patient_id: &str) -> (Patient, PatientTrace) {
    let (lo, hi) = config.docs_per_patient;
    let n = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=config.pre_diagnosis_history_days.1);
    let sites = site_catalog();
    let mut docs = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = *[DocKind::Radiology, DocKind::Radiology, DocKind::Pathology, DocKind::Operative]
            .choose(rng)
            .expect("non-empty");
        let mut doc = DocDraft::new(kind, start + rng.random_range(0..=1500));
        let site = &sites[rng.random_range(0..sites.len())];
        let loc = random_location(rng, site);
        benign_content(rng, &mut doc, &loc);
        if rng.random_bool(config.negation_rate) {
            let j = rng.random_range(0..sites.len());
            let other = random_location(rng, &sites[j]);
            doc.plant(Fact::Negated(other), &[]);
        }
        docs.push(doc);
    }
    assemble_patient(rng, config, patient_id, docs, None)
}

fn assemble_patient<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
    patient_id: &str,
    mut drafts: Vec<DocDraft>,
    plan: Option<CancerPlan<'_>>,
) -> (Patient, PatientTrace) {
    debug_assert!(drafts.iter().all(|d| d.date >= 0));
    // stable sort keeps generation order within a day, which fixes doc ids
    drafts.sort_by_key(|d| d.date);
    let mut documents = Vec::with_capacity(drafts.len());
    let mut traces = Vec::with_capacity(drafts.len());
    for (i, draft) in drafts.into_iter().enumerate() {
        let doc_id = format!("{patient_id}-D{:02}", i + 1);
        let (doc, trace) = render_document(rng, draft, config, doc_id, patient_id);
        documents.push(doc);
        traces.push(trace);
    }
    let (registry, cross_doc, compound, resection_day) = match plan {
        Some(p) => (
            Some(RegistryRecord {
                patient_id: patient_id.to_string(),
                diagnosis_date: p.diagnosis,
                labels: p.labels,
            }),
            p.cross_doc,
            p.compound,
            p.resection_day,
        ),
        None => (None, false, false, None),
    };
    let patient = Patient {
        patient_id: patient_id.to_string(),
        documents,
        registry,
    };
    let trace = PatientTrace {
        patient_id: patient_id.to_string(),
        cross_doc,
        compound,
        resection_day,
        documents: traces,
    };
    (patient, trace)
}

fn patient_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const POOL_STREAM_BASE: u64 = 1 << 40;

/// Generates a corpus; a pure function of `config`.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<CorpusBundle> {
    generate_corpus_traced(config).map(|(bundle, _)| bundle)
}

/// Like [`generate_corpus`], also returning the per-sentence fact trace.
pub fn generate_corpus_traced(config: &GeneratorConfig) -> Result<(CorpusBundle, CorpusTrace)> {
    config.validate()?;
    let n = config.n_cancer_patients + config.n_control_patients;
    let mut roles: Vec<bool> = (0..n).map(|i| i < config.n_cancer_patients).collect();
    roles.shuffle(&mut patient_rng(config.seed, 0));

    let mut patients = Vec::with_capacity(n);
    let mut trace = CorpusTrace::default();
    for (i, &cancer) in roles.iter().enumerate() {
        let pid = format!("P{:05}", i + 1);
        let mut rng = patient_rng(config.seed, i as u64 + 1);
        let (p, t) = if cancer {
            cancer_patient(&mut rng, config, &pid)
        } else {
            control_patient(&mut rng, config, &pid)
        };
        patients.push(p);
        trace.patients.push(t);
    }

    let mut evidence = Vec::new();
    for t in &trace.patients {
        for d in &t.documents {
            for (si, s) in d.sentences.iter().enumerate() {
                for &attribute in &s.evidence {
                    evidence.push(EvidenceSpan {
                        doc_id: d.doc_id.clone(),
                        attribute,
                        char_start: s.char_start,
                        char_end: s.char_end,
                        sentence_index: si,
                    });
                }
            }
        }
    }

    let mut pretrain_pool = Vec::with_capacity(config.pretrain_pool_docs);
    let mut k = 0u64;
    while pretrain_pool.len() < config.pretrain_pool_docs {
        let mut rng = patient_rng(config.seed, POOL_STREAM_BASE + k);
        let pid = format!("U{:05}", k + 1);
        let (p, _) = if rng.random_bool(0.8) {
            cancer_patient(&mut rng, config, &pid)
        } else {
            control_patient(&mut rng, config, &pid)
        };
        for d in p.documents {
            if pretrain_pool.len() == config.pretrain_pool_docs {
                break;
            }
            pretrain_pool.push(PoolDocument {
                doc_id: d.doc_id,
                kind: d.kind,
                text: d.text,
            });
        }
        k += 1;
    }

    let label_spaces = label_spaces(config);
    let lexicon = lexicon(&label_spaces);
    Ok((
        CorpusBundle {
            config: config.clone(),
            patients,
            label_spaces,
            lexicon,
            evidence,
            pretrain_pool,
        },
        trace,
    ))
}
