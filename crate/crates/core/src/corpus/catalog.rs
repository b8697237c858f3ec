//! ICD-O-3 topography and morphology subsets the generator can evidence.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Organ {
    Breast,
    Lung,
    Colon,
    Rectum,
    Liver,
    Prostate,
    Pancreas,
    Stomach,
    Kidney,
    Bladder,
    Thyroid,
    Ovary,
    Cervix,
    Gallbladder,
    Esophagus,
    Skin,
}

impl Organ {
    pub fn noun(self) -> &'static str {
        match self {
            Organ::Breast => "breast",
            Organ::Lung => "lung",
            Organ::Colon => "colon",
            Organ::Rectum => "rectum",
            Organ::Liver => "liver",
            Organ::Prostate => "prostate",
            Organ::Pancreas => "pancreas",
            Organ::Stomach => "stomach",
            Organ::Kidney => "kidney",
            Organ::Bladder => "bladder",
            Organ::Thyroid => "thyroid",
            Organ::Ovary => "ovary",
            Organ::Cervix => "cervix",
            Organ::Gallbladder => "gallbladder",
            Organ::Esophagus => "esophagus",
            Organ::Skin => "skin",
        }
    }

    /// Organs where the primary can be left- or right-sided.
    pub fn lateral(self) -> bool {
        matches!(self, Organ::Breast | Organ::Lung | Organ::Kidney | Organ::Ovary | Organ::Thyroid)
    }
}

/// How a site is located in text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subsite {
    /// Breast quadrant: (upper, outer).
    Quadrant { upper: bool, outer: bool },
    /// Lung lobe: 0 upper, 1 middle, 2 lower.
    Lobe(u8),
    /// Fixed phrases describing this subsite; the organ decides the rest.
    Phrase(&'static [&'static str]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteEntry {
    pub code: &'static str,
    pub organ: Organ,
    pub subsite: Subsite,
    pub aliases: &'static [&'static str],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HistologyEntry {
    pub code: &'static str,
    /// Canonical name first, then paraphrases.
    pub names: &'static [&'static str],
    pub organs: &'static [Organ],
}

const fn site(code: &'static str, organ: Organ, subsite: Subsite, aliases: &'static [&'static str]) -> SiteEntry {
    SiteEntry {
        code,
        organ,
        subsite,
        aliases,
    }
}

static SITES: &[SiteEntry] = &[
    site(
        "C50.4",
        Organ::Breast,
        Subsite::Quadrant { upper: true, outer: true },
        &["upper outer quadrant of breast", "upper outer quadrant", "uoq"],
    ),
    site(
        "C50.2",
        Organ::Breast,
        Subsite::Quadrant { upper: true, outer: false },
        &["upper inner quadrant of breast", "upper inner quadrant", "uiq"],
    ),
    site(
        "C50.5",
        Organ::Breast,
        Subsite::Quadrant { upper: false, outer: true },
        &["lower outer quadrant of breast", "lower outer quadrant", "loq"],
    ),
    site(
        "C50.3",
        Organ::Breast,
        Subsite::Quadrant { upper: false, outer: false },
        &["lower inner quadrant of breast", "lower inner quadrant", "liq"],
    ),
    site("C34.1", Organ::Lung, Subsite::Lobe(0), &["upper lobe of lung", "upper lobe"]),
    site("C34.3", Organ::Lung, Subsite::Lobe(2), &["lower lobe of lung", "lower lobe"]),
    site(
        "C18.7",
        Organ::Colon,
        Subsite::Phrase(&["sigmoid colon", "rectosigmoid segment of the sigmoid colon"]),
        &["sigmoid colon", "sigmoid"],
    ),
    site(
        "C18.2",
        Organ::Colon,
        Subsite::Phrase(&["ascending colon", "right colon near the hepatic flexure"]),
        &["ascending colon", "right colon"],
    ),
    site(
        "C22.0",
        Organ::Liver,
        Subsite::Phrase(&["liver", "hepatic parenchyma"]),
        &["liver", "hepatic"],
    ),
    site(
        "C22.1",
        Organ::Liver,
        Subsite::Phrase(&["liver", "hepatic parenchyma"]),
        &["intrahepatic bile duct", "bile duct"],
    ),
    site(
        "C61.9",
        Organ::Prostate,
        Subsite::Phrase(&["prostate", "peripheral zone of the prostate"]),
        &["prostate", "prostatic"],
    ),
    site(
        "C25.0",
        Organ::Pancreas,
        Subsite::Phrase(&["head of the pancreas", "pancreatic head"]),
        &["head of pancreas", "pancreatic head"],
    ),
    site(
        "C25.2",
        Organ::Pancreas,
        Subsite::Phrase(&["tail of the pancreas", "pancreatic tail"]),
        &["tail of pancreas", "pancreatic tail"],
    ),
    site("C34.2", Organ::Lung, Subsite::Lobe(1), &["middle lobe of lung", "middle lobe"]),
    site("C18.0", Organ::Colon, Subsite::Phrase(&["cecum", "cecal base"]), &["cecum", "cecal"]),
    site("C20.9", Organ::Rectum, Subsite::Phrase(&["rectum", "distal rectum"]), &["rectum", "rectal"]),
    site(
        "C23.9",
        Organ::Gallbladder,
        Subsite::Phrase(&["gallbladder", "gallbladder fundus"]),
        &["gallbladder"],
    ),
    site(
        "C16.0",
        Organ::Stomach,
        Subsite::Phrase(&["gastric cardia", "cardia of the stomach"]),
        &["cardia", "gastric cardia"],
    ),
    site(
        "C16.3",
        Organ::Stomach,
        Subsite::Phrase(&["gastric antrum", "antrum of the stomach"]),
        &["antrum", "gastric antrum"],
    ),
    site("C64.9", Organ::Kidney, Subsite::Phrase(&["kidney", "renal cortex"]), &["kidney", "renal"]),
    site(
        "C67.9",
        Organ::Bladder,
        Subsite::Phrase(&["urinary bladder", "bladder wall"]),
        &["bladder", "urinary bladder"],
    ),
    site("C73.9", Organ::Thyroid, Subsite::Phrase(&["thyroid lobe", "thyroid gland"]), &["thyroid"]),
    site("C56.9", Organ::Ovary, Subsite::Phrase(&["ovary", "adnexa"]), &["ovary", "ovarian"]),
    site("C53.9", Organ::Cervix, Subsite::Phrase(&["cervix", "uterine cervix"]), &["cervix", "cervical"]),
    site(
        "C15.5",
        Organ::Esophagus,
        Subsite::Phrase(&["distal esophagus", "lower third of the esophagus"]),
        &["lower esophagus", "distal esophagus"],
    ),
    site(
        "C44.5",
        Organ::Skin,
        Subsite::Phrase(&["skin of the back", "skin of the upper back"]),
        &["skin of trunk", "skin of the back"],
    ),
];

use Organ::*;

static HISTOLOGIES: &[HistologyEntry] = &[
    HistologyEntry {
        code: "8500",
        names: &["invasive ductal carcinoma", "infiltrating duct carcinoma"],
        organs: &[Breast, Pancreas],
    },
    HistologyEntry {
        code: "8140",
        names: &["adenocarcinoma", "invasive adenocarcinoma"],
        organs: &[Lung, Colon, Rectum, Liver, Prostate, Pancreas, Stomach, Esophagus, Cervix, Gallbladder],
    },
    HistologyEntry {
        code: "8070",
        names: &["squamous cell carcinoma", "invasive squamous cell carcinoma"],
        organs: &[Lung, Cervix, Esophagus, Skin],
    },
    HistologyEntry {
        code: "8520",
        names: &["invasive lobular carcinoma", "infiltrating lobular carcinoma"],
        organs: &[Breast],
    },
    HistologyEntry {
        code: "8170",
        names: &["hepatocellular carcinoma", "liver cell carcinoma"],
        organs: &[Liver],
    },
    HistologyEntry {
        code: "8160",
        names: &["cholangiocarcinoma", "bile duct carcinoma"],
        organs: &[Liver],
    },
    HistologyEntry {
        code: "8041",
        names: &["small cell carcinoma", "small cell neuroendocrine carcinoma"],
        organs: &[Lung],
    },
    HistologyEntry {
        code: "8480",
        names: &["mucinous adenocarcinoma", "colloid adenocarcinoma"],
        organs: &[Breast, Colon, Rectum, Pancreas, Ovary],
    },
    HistologyEntry {
        code: "8522",
        names: &["infiltrating duct and lobular carcinoma", "mixed ductal and lobular carcinoma"],
        organs: &[Breast],
    },
    HistologyEntry {
        code: "8046",
        names: &["non-small cell carcinoma", "non-small cell lung carcinoma"],
        organs: &[Lung],
    },
    HistologyEntry {
        code: "8550",
        names: &["acinar cell carcinoma", "acinar adenocarcinoma"],
        organs: &[Pancreas, Prostate],
    },
    HistologyEntry {
        code: "8210",
        names: &["adenocarcinoma in adenomatous polyp", "adenocarcinoma arising in a polyp"],
        organs: &[Colon, Rectum],
    },
    HistologyEntry {
        code: "8250",
        names: &["lepidic adenocarcinoma", "bronchioloalveolar carcinoma"],
        organs: &[Lung],
    },
    HistologyEntry {
        code: "8490",
        names: &["signet ring cell carcinoma", "signet ring cell adenocarcinoma"],
        organs: &[Stomach, Colon],
    },
    HistologyEntry {
        code: "8246",
        names: &["neuroendocrine carcinoma", "high grade neuroendocrine carcinoma"],
        organs: &[Lung, Pancreas, Colon],
    },
    HistologyEntry {
        code: "8240",
        names: &["carcinoid tumor", "well differentiated neuroendocrine tumor"],
        organs: &[Lung, Colon],
    },
    HistologyEntry {
        code: "8071",
        names: &["keratinizing squamous cell carcinoma", "squamous cell carcinoma, keratinizing type"],
        organs: &[Lung, Cervix, Esophagus],
    },
    HistologyEntry {
        code: "8010",
        names: &["carcinoma", "poorly differentiated carcinoma"],
        organs: &[Breast, Lung, Colon, Liver, Prostate, Pancreas],
    },
    HistologyEntry {
        code: "8020",
        names: &["undifferentiated carcinoma", "anaplastic carcinoma"],
        organs: &[Thyroid, Pancreas, Lung],
    },
    HistologyEntry {
        code: "8120",
        names: &["urothelial carcinoma", "transitional cell carcinoma"],
        organs: &[Bladder],
    },
    HistologyEntry {
        code: "8130",
        names: &["papillary urothelial carcinoma", "papillary transitional cell carcinoma"],
        organs: &[Bladder],
    },
    HistologyEntry {
        code: "8310",
        names: &["clear cell adenocarcinoma", "clear cell carcinoma"],
        organs: &[Kidney, Ovary],
    },
    HistologyEntry {
        code: "8260",
        names: &["papillary adenocarcinoma", "papillary carcinoma"],
        organs: &[Thyroid, Kidney, Lung],
    },
    HistologyEntry {
        code: "8330",
        names: &["follicular carcinoma", "follicular adenocarcinoma"],
        organs: &[Thyroid],
    },
    HistologyEntry {
        code: "8340",
        names: &["papillary carcinoma, follicular variant", "follicular variant of papillary carcinoma"],
        organs: &[Thyroid],
    },
    HistologyEntry {
        code: "8441",
        names: &["serous cystadenocarcinoma", "high grade serous carcinoma"],
        organs: &[Ovary],
    },
    HistologyEntry {
        code: "8144",
        names: &["intestinal type adenocarcinoma", "adenocarcinoma, intestinal type"],
        organs: &[Stomach],
    },
    HistologyEntry {
        code: "8560",
        names: &["adenosquamous carcinoma", "mixed adenosquamous carcinoma"],
        organs: &[Lung, Pancreas, Cervix],
    },
    HistologyEntry {
        code: "8720",
        names: &["malignant melanoma", "invasive melanoma"],
        organs: &[Skin],
    },
    HistologyEntry {
        code: "8090",
        names: &["basal cell carcinoma", "infiltrative basal cell carcinoma"],
        organs: &[Skin],
    },
    HistologyEntry {
        code: "8200",
        names: &["adenoid cystic carcinoma", "cribriform adenoid cystic carcinoma"],
        organs: &[Breast, Lung],
    },
    HistologyEntry {
        code: "8890",
        names: &["leiomyosarcoma", "smooth muscle sarcoma"],
        organs: &[Stomach, Colon],
    },
    HistologyEntry {
        code: "8800",
        names: &["sarcoma", "malignant spindle cell neoplasm"],
        organs: &[Breast, Stomach],
    },
    HistologyEntry {
        code: "8000",
        names: &["malignant neoplasm", "malignant tumor"],
        organs: &[Breast, Lung, Colon, Liver, Pancreas],
    },
];

/// Sites in label-space order; a corpus uses the first `n_site_classes`.
pub fn site_catalog() -> &'static [SiteEntry] {
    SITES
}

/// Morphologies in label-space order; a corpus uses the first `n_histology_classes`.
pub fn histology_catalog() -> &'static [HistologyEntry] {
    HISTOLOGIES
}

/// Clock positions that fall unambiguously inside one quadrant.
pub const CLOCK_POSITIONS: [u8; 8] = [1, 2, 4, 5, 7, 8, 10, 11];

/// Quadrant of a clock position as seen facing the patient: 3 o'clock is
/// lateral on the left breast and medial on the right.
pub fn clock_quadrant(left: bool, clock: u8) -> (bool, bool) {
    let upper = matches!(clock, 10 | 11 | 12 | 1 | 2);
    let left_face = matches!(clock, 1..=5);
    // On the left breast the 1-5 o'clock side is outer; mirrored on the right.
    let outer = if left { left_face } else { !left_face };
    (upper, outer)
}

/// Morphology codes that resolve a liver primary to the hepatic parenchyma (C22.0)
/// rather than the intrahepatic bile ducts (C22.1).
pub fn is_hepatocellular(histology: &str) -> bool {
    matches!(histology, "8170" | "8010" | "8000")
}
