//! Sentence templates and their semantics.
//!
//! Every generated sentence is `render(fact, variant)`. The label a set of
//! sentences entails is computed from the facts alone, so replaying the
//! templates over a document reproduces both its text and its meaning.

use super::catalog::{clock_quadrant, is_hepatocellular, site_catalog, Organ, Subsite};
use super::{AttributeKind, DocKind, NOT_DOCUMENTED};

/// Where a lesion is, at the granularity the text states it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub organ: Organ,
    /// `Some(true)` for left.
    pub left: Option<bool>,
    pub detail: Detail,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Detail {
    Clock(u8),
    Quadrant { upper: bool, outer: bool },
    Lobe(u8),
    /// Catalog code plus which phrase of its bank is used. Liver phrases are
    /// shared by C22.0 and C22.1.
    Phrase { code: &'static str, variant: u8 },
    /// Organ-level mention only ("the left breast").
    Organ,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Fact {
    /// Document header line.
    Header(DocKind, u8),
    /// Boilerplate with no clinical content.
    Filler(DocKind, u8),
    /// Radiology lesion suspicious for malignancy.
    Suspicious(Location),
    /// A benign lesion and a suspicious lesion described together.
    Compound { benign: Location, suspicious: Location, suspicious_first: bool },
    /// Tissue diagnosis of malignancy.
    Malignancy { histology: &'static str, name: u8, location: Option<Location>, resection: bool },
    /// Benign finding at a location.
    Benign(Location),
    /// Explicitly negated finding at a location.
    Negated(Location),
    /// Benign tissue diagnosis.
    BenignTissue(Location),
    /// Atypia or an indeterminate lesion, short of a malignancy diagnosis.
    Atypia(Location),
    /// Atypical tissue with a named malignancy only in the differential.
    Differential { histology: &'static str, name: u8, location: Location },
    Stage { clinical: bool, t: Option<String>, n: Option<String>, m: Option<String> },
    /// Procedure performed, optionally naming the organ.
    Procedure { organ: Option<Organ>, left: Option<bool>, resection: bool },
    /// Follow-up statement referring back to a treated malignancy.
    Surveillance,
}

fn side(left: bool) -> &'static str {
    if left {
        "left"
    } else {
        "right"
    }
}

fn lobe_word(l: u8) -> &'static str {
    match l {
        0 => "upper",
        1 => "middle",
        _ => "lower",
    }
}

fn quadrant_words(upper: bool, outer: bool) -> String {
    format!(
        "{} {}",
        if upper { "upper" } else { "lower" },
        if outer { "outer" } else { "inner" }
    )
}

fn phrase_bank(code: &str) -> &'static [&'static str] {
    site_catalog()
        .iter()
        .find(|s| s.code == code)
        .and_then(|s| match s.subsite {
            Subsite::Phrase(p) => Some(p),
            _ => None,
        })
        .unwrap_or(&[])
}

/// Noun phrase for a location, starting with "the".
pub fn location_phrase(loc: &Location, variant: u8) -> String {
    let lat = loc.left.map(side);
    match (&loc.detail, loc.organ) {
        (Detail::Clock(c), _) => {
            let s = lat.unwrap_or("left");
            if variant % 2 == 0 {
                format!("the {s} breast at {c} o'clock")
            } else {
                format!("the {c} o'clock position of the {s} breast")
            }
        }
        (Detail::Quadrant { upper, outer }, _) => {
            let s = lat.unwrap_or("left");
            let q = quadrant_words(*upper, *outer);
            if variant % 2 == 0 {
                format!("the {q} quadrant of the {s} breast")
            } else {
                format!("the {s} breast, {q} quadrant")
            }
        }
        (Detail::Lobe(l), _) => {
            let s = lat.unwrap_or("right");
            if variant % 2 == 0 {
                format!("the {s} {} lobe", lobe_word(*l))
            } else {
                format!("the {} lobe of the {s} lung", lobe_word(*l))
            }
        }
        (Detail::Phrase { code, variant: pv }, organ) => {
            let bank = phrase_bank(code);
            let p = bank.get(*pv as usize).copied().unwrap_or(organ.noun());
            match lat {
                Some(s) => format!("the {s} {p}"),
                None => format!("the {p}"),
            }
        }
        (Detail::Organ, organ) => match lat {
            Some(s) => format!("the {s} {}", organ.noun()),
            None => format!("the {}", organ.noun()),
        },
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn histology_name(code: &str, name: u8) -> &'static str {
    super::catalog::histology_catalog()
        .iter()
        .find(|h| h.code == code)
        .map(|h| h.names[(name as usize).min(h.names.len() - 1)])
        .unwrap_or("malignant neoplasm")
}

const PATH_HEADERS: &[&str] = &["Surgical pathology report.", "Pathology consultation report."];
const RAD_HEADERS: &[&str] = &["Diagnostic imaging report.", "Radiology report."];
const OP_HEADERS: &[&str] = &["Operative note.", "Procedure note."];

const PATH_FILLER: &[&str] = &[
    "The specimen is received in formalin labeled with the patient name.",
    "Gross description: the specimen consists of multiple tan-pink tissue fragments.",
    "The tissue is entirely submitted in one cassette.",
    "Immunohistochemical stains were reviewed with appropriate controls.",
    "Specimen No. 2 is labeled as additional tissue.",
    "Sections were reviewed at the intradepartmental consensus conference.",
    "Fixation time was within the recommended range.",
    "Representative sections are submitted for microscopic examination.",
    "Findings were discussed with Dr. Patel on the day of sign out.",
    "The specimen measures approx. 1.5 cm in greatest dimension.",
    "Clinical history was provided on the requisition form.",
    "Frozen section was not requested.",
    "Decalcification was not required.",
    "Ancillary studies are pending and will be reported separately.",
];

const RAD_FILLER: &[&str] = &[
    "Comparison is made with the prior examination.",
    "The visualized osseous structures are intact.",
    "Heart size is within normal limits.",
    "There is no pleural effusion or pneumothorax.",
    "The spleen and adrenal glands are unremarkable.",
    "Technique: images were obtained with intravenous contrast.",
    "No acute abnormality of the visualized soft tissues.",
    "Mild degenerative changes of the spine are noted.",
    "The study is of diagnostic quality.",
    "Results were communicated to the ordering provider, e.g. by phone.",
    "There is no free fluid in the pelvis.",
    "Vascular structures are patent.",
    "Report reviewed and signed by the attending radiologist.",
    "No enlarged mediastinal lymph nodes by size criteria.",
];

const OP_FILLER: &[&str] = &[
    "The patient was brought to the operating room and placed supine.",
    "General anesthesia was induced without difficulty.",
    "The area was prepped and draped in the usual sterile fashion.",
    "A time out was performed confirming the correct patient and procedure.",
    "Hemostasis was obtained with electrocautery.",
    "Estimated blood loss was minimal.",
    "The patient tolerated the procedure well.",
    "Sponge and needle counts were correct at the end of the case.",
    "The patient was transferred to recovery in stable condition.",
    "Prophylactic antibiotics were given before incision.",
    "Informed consent was obtained after discussion of risks and benefits.",
    "Seen by Dr. Okafor before the procedure.",
    "There were no intraoperative complications.",
    "The wound was closed in layers.",
];

pub fn filler_count(kind: DocKind) -> usize {
    match kind {
        DocKind::Pathology => PATH_FILLER.len(),
        DocKind::Radiology => RAD_FILLER.len(),
        DocKind::Operative => OP_FILLER.len(),
    }
}

pub fn header_count(kind: DocKind) -> usize {
    match kind {
        DocKind::Pathology => PATH_HEADERS.len(),
        DocKind::Radiology => RAD_HEADERS.len(),
        DocKind::Operative => OP_HEADERS.len(),
    }
}

/// Number of distinct renderings `render` accepts for a fact.
pub fn variant_count(fact: &Fact) -> u8 {
    match fact {
        Fact::Header(..) | Fact::Filler(..) => 1,
        Fact::Suspicious(_) | Fact::Malignancy { .. } => 6,
        Fact::Compound { .. } => 2,
        Fact::Benign(_) | Fact::Negated(_) | Fact::BenignTissue(_) | Fact::Atypia(_) | Fact::Differential { .. } => 6,
        Fact::Stage { .. } => 3,
        Fact::Procedure { .. } => 2,
        Fact::Surveillance => 3,
    }
}

fn stage_value(prefix: &str, axis: char, value: &str, variant: u8) -> String {
    match value {
        "N1+" => format!("{prefix}{axis}{}", ["1", "2", "1", "3"][variant as usize % 4]),
        "Tis" => format!("{prefix}Tis"),
        v => format!("{prefix}{v}"),
    }
}

/// Renders a fact; `variant` selects the paraphrase (low bits) and the
/// location wording (next bit).
pub fn render(fact: &Fact, variant: u8) -> String {
    let lv = variant / 3;
    let text = match fact {
        Fact::Header(kind, i) => {
            let bank = match kind {
                DocKind::Pathology => PATH_HEADERS,
                DocKind::Radiology => RAD_HEADERS,
                DocKind::Operative => OP_HEADERS,
            };
            return bank[*i as usize % bank.len()].to_string();
        }
        Fact::Filler(kind, i) => {
            let bank = match kind {
                DocKind::Pathology => PATH_FILLER,
                DocKind::Radiology => RAD_FILLER,
                DocKind::Operative => OP_FILLER,
            };
            return bank[*i as usize % bank.len()].to_string();
        }
        Fact::Suspicious(loc) => {
            let l = location_phrase(loc, lv);
            match variant % 3 {
                0 => format!("there is an irregular mass in {l}, suspicious for malignancy."),
                1 => format!("a spiculated lesion is seen in {l}, highly suspicious for malignancy."),
                _ => format!("findings in {l} are concerning for a primary malignancy."),
            }
        }
        Fact::Compound {
            benign,
            suspicious,
            suspicious_first,
        } => {
            let b = location_phrase(benign, variant % 2);
            let s = location_phrase(suspicious, variant % 2);
            let (first, second, fw, sw) = if *suspicious_first {
                (s, b, "an irregular mass", "a benign appearing cyst")
            } else {
                (b, s, "a benign appearing cyst", "an irregular mass")
            };
            format!("there is {fw} in {first} and {sw} in {second}, the mass is suspicious for malignancy.")
        }
        Fact::Malignancy {
            histology,
            name,
            location,
            resection,
        } => {
            let h = histology_name(histology, *name);
            match (location, resection) {
                (Some(loc), false) => {
                    let l = location_phrase(loc, lv);
                    match variant % 3 {
                        0 => format!("biopsy of {l} shows {h}."),
                        1 => format!("sections from {l} demonstrate {h}."),
                        _ => format!("final diagnosis: {l}, core biopsy, {h}."),
                    }
                }
                (None, false) => match variant % 3 {
                    0 => format!("core biopsy of the mass shows {h}."),
                    1 => format!("sections demonstrate {h}."),
                    _ => format!("final diagnosis: {h}."),
                },
                (Some(loc), true) => {
                    let l = location_phrase(loc, lv);
                    match variant % 3 {
                        0 => format!("resection of {l} shows residual {h}."),
                        1 => format!("the resected specimen from {l} contains {h}."),
                        _ => format!("final diagnosis: {l}, resection, {h}."),
                    }
                }
                (None, true) => match variant % 3 {
                    0 => format!("the resection specimen shows residual {h}."),
                    1 => format!("the resected tumor is {h}."),
                    _ => format!("final diagnosis: resection specimen, {h}."),
                },
            }
        }
        Fact::Benign(loc) => {
            let l = location_phrase(loc, lv);
            match variant % 3 {
                0 => format!("a simple cyst is noted in {l}, compatible with a benign finding."),
                1 => format!("a stable benign appearing nodule is present in {l}."),
                _ => format!("{l} is unremarkable."),
            }
        }
        Fact::Negated(loc) => {
            let l = location_phrase(loc, lv);
            match variant % 3 {
                0 => format!("no suspicious mass is identified in {l}."),
                1 => format!("there is no evidence of malignancy in {l}."),
                _ => format!("no focal lesion is seen in {l}."),
            }
        }
        Fact::BenignTissue(loc) => {
            let l = location_phrase(loc, lv);
            match variant % 3 {
                0 => format!("biopsy of {l} shows benign tissue, negative for malignancy."),
                1 => format!("sections from {l} show chronic inflammation without evidence of malignancy."),
                _ => format!("final diagnosis: {l}, benign fibrous tissue."),
            }
        }
        Fact::Atypia(loc) => {
            let l = location_phrase(loc, lv);
            match variant % 3 {
                0 => format!("an indeterminate lesion in {l} is noted, short interval follow up is recommended."),
                1 => format!("biopsy of {l} shows atypical cells, suspicious but not diagnostic of malignancy."),
                _ => format!("there is a nonspecific lesion in {l}, suspicious for malignancy cannot be excluded."),
            }
        }
        Fact::Differential { histology, name, location } => {
            let l = location_phrase(location, lv);
            let h = histology_name(histology, *name);
            match variant % 3 {
                0 => format!("biopsy of {l} shows atypical cells, {h} cannot be excluded, repeat sampling is recommended."),
                1 => format!("sections from {l} show atypia, the differential includes {h}, not diagnostic."),
                _ => format!("final diagnosis: {l}, atypical proliferation, suspicious for but not diagnostic of {h}."),
            }
        }
        Fact::Stage { clinical, t, n, m } => {
            let p = if *clinical { "c" } else { "p" };
            let v = variant % 3;
            let parts: Vec<String> = [(t, 'T'), (n, 'N'), (m, 'M')]
                .into_iter()
                .filter_map(|(val, axis)| val.as_deref().map(|x| stage_value(if v == 0 { p } else { "" }, axis, x, variant)))
                .collect();
            let label = if *clinical { "clinical" } else { "pathologic" };
            match v {
                0 => format!("{label} stage: {}.", parts.join(" ")),
                1 => format!("{label} staging is {}.", parts.join(", ")),
                _ => format!("findings are consistent with {label} {} disease.", parts.join(" ")),
            }
        }
        Fact::Procedure { organ, left, resection } => {
            let what = match organ {
                Some(o) => match left {
                    Some(l) => format!("the {} {}", side(*l), o.noun()),
                    None => format!("the {}", o.noun()),
                },
                None => "the target lesion".to_string(),
            };
            match (resection, variant % 2) {
                (true, 0) => format!("definitive surgical resection of {what} was performed."),
                (true, _) => format!("an oncologic resection of {what} was completed with clear margins."),
                (false, 0) => format!("an image guided core needle biopsy of {what} was performed."),
                (false, _) => format!("tissue sampling of {what} was obtained without complication."),
            }
        }
        Fact::Surveillance => match variant % 3 {
            0 => "surveillance imaging shows no evidence of recurrent disease.".to_string(),
            1 => "the patient is followed after treatment of a known malignancy.".to_string(),
            _ => "no new lesions are identified on this surveillance study.".to_string(),
        },
    };
    capitalize(&text)
}

/// Resolves a stated location plus a confirmed histology to a site code.
pub fn resolve_site(loc: &Location, histology: &str) -> Option<&'static str> {
    let quadrant = |upper: bool, outer: bool| {
        site_catalog()
            .iter()
            .find(|s| s.subsite == Subsite::Quadrant { upper, outer })
            .map(|s| s.code)
    };
    match (&loc.detail, loc.organ) {
        (Detail::Clock(c), Organ::Breast) => {
            let (u, o) = clock_quadrant(loc.left?, *c);
            quadrant(u, o)
        }
        (Detail::Quadrant { upper, outer }, Organ::Breast) => quadrant(*upper, *outer),
        (Detail::Lobe(l), Organ::Lung) => site_catalog()
            .iter()
            .find(|s| s.organ == Organ::Lung && s.subsite == Subsite::Lobe(*l))
            .map(|s| s.code),
        (Detail::Phrase { .. }, Organ::Liver) => Some(if is_hepatocellular(histology) { "C22.0" } else { "C22.1" }),
        (Detail::Phrase { code, .. }, _) => Some(code),
        _ => None,
    }
}

/// Facts that describe the primary tumor's location.
fn tumor_locations<'a>(facts: &[&'a Fact]) -> Vec<&'a Location> {
    let mut out = Vec::new();
    for f in facts {
        match f {
            Fact::Suspicious(l) => out.push(l),
            Fact::Compound { suspicious, .. } => out.push(suspicious),
            Fact::Malignancy { location: Some(l), .. } => out.push(l),
            _ => {}
        }
    }
    out
}

/// Label the given facts entail for an attribute, under template semantics.
///
/// Site needs a tissue diagnosis of malignancy and a tumor location that
/// resolves to one site; absent evidence returns `None` (not entailed), which
/// is distinct from a documented "not-documented".
pub fn entailed_label(attribute: AttributeKind, facts: &[&Fact]) -> Option<String> {
    match attribute {
        AttributeKind::Site => {
            let hist = facts.iter().find_map(|f| match f {
                Fact::Malignancy { histology, .. } => Some(*histology),
                _ => None,
            })?;
            let mut codes: Vec<&str> = tumor_locations(facts)
                .into_iter()
                .filter_map(|l| resolve_site(l, hist))
                .collect();
            codes.sort_unstable();
            codes.dedup();
            match codes.as_slice() {
                [one] => Some(one.to_string()),
                _ => None,
            }
        }
        AttributeKind::Histology => facts.iter().find_map(|f| match f {
            Fact::Malignancy { histology, .. } => Some(histology.to_string()),
            _ => None,
        }),
        _ => {
            let clinical = matches!(
                attribute,
                AttributeKind::ClinicalT | AttributeKind::ClinicalN | AttributeKind::ClinicalM
            );
            facts.iter().find_map(|f| match f {
                Fact::Stage { clinical: c, t, n, m } if *c == clinical => match attribute {
                    AttributeKind::ClinicalT | AttributeKind::PathT => t.clone(),
                    AttributeKind::ClinicalN | AttributeKind::PathN => n.clone(),
                    _ => m.clone(),
                },
                _ => None,
            })
        }
    }
}

/// True when the fact asserts a confirmed malignancy.
pub fn is_positive_malignancy(fact: &Fact) -> bool {
    matches!(fact, Fact::Malignancy { .. } | Fact::Surveillance)
}

/// Whether a label is the sentinel for absent documentation.
pub fn is_sentinel(label: &str) -> bool {
    label == NOT_DOCUMENTED
}
