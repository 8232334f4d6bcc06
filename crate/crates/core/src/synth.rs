//! Seeded synthetic multilingual corpus with planted gold evidence.
//!
//! Every document is rendered twice, as layout-marked Markdown and as wrapped
//! plain lines (with occasional end-of-line hyphenation), and carries three
//! gold records, each answering a query from a different query family so
//! that no two golds in one document share a long query prefix.
//!
//! Gold paragraphs quote the query and state the stance with a cue phrase the
//! keyword stub understands. Two planted variants make evidence selection
//! matter: in `cue_after_gold` the annotated snippet stops before the cue
//! sentence, and in `distractor_before_gold` the paragraph opens with an
//! unrelated cue of a different stance.

use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_dataset, DocumentMetadata, EvidenceRecord, ParserStyle, Stance, UploadPayload};
use crate::error::Result;
use crate::providers::stub::stance_cue;
use crate::stance::QueryId;

pub const LANGUAGES: [&str; 4] = ["en", "de", "fr", "es"];
pub const DEFAULT_DOCS_PER_LANGUAGE: usize = 20;
pub const DEFAULT_SEED: u64 = 7;

const FAMILY_MEASURES: [u8; 6] = [1, 3, 5, 8, 11, 13];
const FAMILY_TRANSPARENCY: [u8; 3] = [2, 4, 6];
const FAMILY_OTHER: [u8; 4] = [7, 9, 10, 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldVariant {
    Plain,
    CueAfterGold,
    DistractorBeforeGold,
}

impl fmt::Display for GoldVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoldVariant::Plain => "plain",
            GoldVariant::CueAfterGold => "cue_after_gold",
            GoldVariant::DistractorBeforeGold => "distractor_before_gold",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<EvidenceRecord>,
    pub payloads: Vec<UploadPayload>,
}

impl SyntheticCorpus {
    pub fn payloads_for(&self, style: ParserStyle) -> impl Iterator<Item = &UploadPayload> {
        self.payloads.iter().filter(move |p| p.parser_style == style)
    }

    /// Writes `dataset.jsonl` and `docs/{style}.jsonl` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("docs"))?;
        write_dataset(&dir.join("dataset.jsonl"), &self.records)?;
        for style in ParserStyle::ALL {
            let mut out = String::new();
            for p in self.payloads_for(style) {
                out.push_str(&serde_json::to_string(p)?);
                out.push('\n');
            }
            std::fs::write(dir.join("docs").join(format!("{style}.jsonl")), out)?;
        }
        Ok(())
    }
}

struct Lexicon {
    subjects: &'static [&'static str],
    verbs: &'static [&'static str],
    objects: &'static [&'static str],
    tails: &'static [&'static str],
    titles: &'static [&'static str],
    sections: &'static [&'static str],
    colon_lead: &'static str,
    table_head: [&'static str; 3],
    regions: &'static [&'static str],
    suffixes: &'static [&'static str],
}

const EN: Lexicon = Lexicon {
    subjects: &["The group", "Our logistics division", "The board", "Regional teams", "The procurement unit", "Our retail business", "The finance team", "Plant managers"],
    verbs: &["expanded", "reviewed", "modernised", "invested in", "completed an audit of", "streamlined", "renegotiated", "digitised"],
    objects: &["its warehouse network", "the customer service platform", "supplier contracts", "the product portfolio", "internal training programmes", "the vehicle fleet", "office facilities", "payroll systems"],
    tails: &["during the reporting year", "in close cooperation with suppliers", "ahead of the original schedule", "across all business units", "with a focus on cost discipline", "following a detailed internal review"],
    titles: &["Annual Report", "Sustainability Report", "Corporate Responsibility Review"],
    sections: &["Public Policy Engagement", "Regulatory Outlook", "Our Position on Energy Policy", "Advocacy and Memberships", "Governance of Lobbying"],
    colon_lead: "The main operational milestones of the year are summarised below:",
    table_head: ["Year", "Revenue", "Employees"],
    regions: &["United Kingdom", "United States", "Australia"],
    suffixes: &["plc", "Holdings", "Group"],
};

const DE: Lexicon = Lexicon {
    subjects: &["Der Konzern", "Unsere Logistiksparte", "Der Vorstand", "Die regionalen Teams", "Der Einkauf", "Unser Handelsgeschäft", "Das Finanzteam", "Die Werksleitungen"],
    verbs: &["erweiterte", "überprüfte", "modernisierte", "investierte in", "prüfte", "straffte", "verhandelte neu", "digitalisierte"],
    objects: &["das Lagernetz", "die Kundenplattform", "die Lieferverträge", "das Produktportfolio", "die internen Schulungen", "den Fuhrpark", "die Büroflächen", "die Lohnabrechnung"],
    tails: &["im Berichtsjahr", "in enger Zusammenarbeit mit Lieferanten", "früher als geplant", "in allen Geschäftsbereichen", "mit Blick auf die Kostendisziplin", "nach einer gründlichen internen Prüfung"],
    titles: &["Geschäftsbericht", "Nachhaltigkeitsbericht", "Bericht zur Unternehmensverantwortung"],
    sections: &["Politische Interessenvertretung", "Regulatorischer Ausblick", "Unsere Haltung zur Energiepolitik", "Verbände und Mitgliedschaften", "Steuerung der Lobbyarbeit"],
    colon_lead: "Die wichtigsten betrieblichen Meilensteine des Jahres sind im Folgenden zusammengefasst:",
    table_head: ["Jahr", "Umsatz", "Mitarbeitende"],
    regions: &["Deutschland", "Österreich"],
    suffixes: &["AG", "SE", "GmbH"],
};

const FR: Lexicon = Lexicon {
    subjects: &["Le groupe", "Notre division logistique", "Le conseil d'administration", "Les équipes régionales", "Le service achats", "Notre activité de distribution", "L'équipe financière", "Les directeurs d'usine"],
    verbs: &["a élargi", "a examiné", "a modernisé", "a investi dans", "a audité", "a rationalisé", "a renégocié", "a numérisé"],
    objects: &["son réseau d'entrepôts", "la plateforme client", "les contrats fournisseurs", "le portefeuille de produits", "les formations internes", "la flotte de véhicules", "les locaux administratifs", "les systèmes de paie"],
    tails: &["au cours de l'exercice", "en étroite collaboration avec les fournisseurs", "plus tôt que prévu", "dans toutes les divisions", "dans un souci de maîtrise des coûts", "après un examen interne approfondi"],
    titles: &["Rapport annuel", "Rapport de durabilité", "Rapport de responsabilité d'entreprise"],
    sections: &["Engagement en matière de politiques publiques", "Perspectives réglementaires", "Notre position sur la politique énergétique", "Associations et adhésions", "Gouvernance du lobbying"],
    colon_lead: "Les principales étapes opérationnelles de l'année sont résumées ci-dessous:",
    table_head: ["Année", "Chiffre d'affaires", "Effectifs"],
    regions: &["France", "Belgique"],
    suffixes: &["SA", "Groupe"],
};

const ES: Lexicon = Lexicon {
    subjects: &["El grupo", "Nuestra división logística", "El consejo", "Los equipos regionales", "El área de compras", "Nuestro negocio minorista", "El equipo financiero", "Los directores de planta"],
    verbs: &["amplió", "revisó", "modernizó", "invirtió en", "auditó", "simplificó", "renegoció", "digitalizó"],
    objects: &["su red de almacenes", "la plataforma de clientes", "los contratos con proveedores", "la cartera de productos", "los programas de formación interna", "la flota de vehículos", "las oficinas", "los sistemas de nóminas"],
    tails: &["durante el ejercicio", "en estrecha colaboración con los proveedores", "antes de lo previsto", "en todas las unidades de negocio", "con atención a la disciplina de costes", "tras una revisión interna detallada"],
    titles: &["Informe anual", "Informe de sostenibilidad", "Informe de responsabilidad corporativa"],
    sections: &["Compromiso con las políticas públicas", "Perspectivas regulatorias", "Nuestra posición sobre la política energética", "Asociaciones y membresías", "Gobernanza del lobby"],
    colon_lead: "Los principales hitos operativos del año se resumen a continuación:",
    table_head: ["Año", "Ingresos", "Empleados"],
    regions: &["España", "México"],
    suffixes: &["S.A.", "Grupo"],
};

const NAME_HEADS: &[&str] = &["Nord", "Blue", "Rhein", "Sol", "Iber", "Castel", "Alpen", "Mari", "Lumi", "Verd", "Ost", "Silva", "Terra", "Aqua", "Ferro", "Granit"];
const NAME_TAILS: &[&str] = &["wind", "stone", "kraft", "vane", "terra", "lum", "werk", "sol", "ère", "ant", "mark", "gen", "port", "field"];

fn lexicon(lang: &str) -> &'static Lexicon {
    match lang {
        "de" => &DE,
        "fr" => &FR,
        "es" => &ES,
        _ => &EN,
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty pool")
}

fn filler_sentence(rng: &mut ChaCha8Rng, lex: &Lexicon) -> String {
    format!("{} {} {} {}.", pick(rng, lex.subjects), pick(rng, lex.verbs), pick(rng, lex.objects), pick(rng, lex.tails))
}

fn filler_paragraph(rng: &mut ChaCha8Rng, lex: &Lexicon, sentences: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.gen_range(sentences);
    (0..n).map(|_| filler_sentence(rng, lex)).collect::<Vec<_>>().join(" ")
}

fn gold_sentence(lang: &str, query: &str, company: &str, cue: Option<&str>, year: i32) -> String {
    match (lang, cue) {
        ("de", Some(c)) => format!("Zur Frage „{query}“ {company} {c} die entsprechenden Maßnahmen laut Bericht {year}."),
        ("de", None) => format!("Zur Frage „{query}“ legt {company} seine Position im Bericht {year} dar."),
        ("fr", Some(c)) => format!("Sur la question « {query} », {company} {c} les mesures correspondantes dans son rapport {year}."),
        ("fr", None) => format!("Sur la question « {query} », {company} expose sa position dans son rapport {year}."),
        ("es", Some(c)) => format!("Sobre la pregunta « {query} », {company} {c} las medidas correspondientes en su informe {year}."),
        ("es", None) => format!("Sobre la pregunta « {query} », {company} expone su posición en su informe {year}."),
        (_, Some(c)) => format!("On the question \"{query}\", {company} {c} the relevant measures according to its {year} report."),
        (_, None) => format!("On the question \"{query}\", {company} sets out its position in its {year} report."),
    }
}

fn cue_sentence(lang: &str, cue: &str) -> String {
    match lang {
        "de" => format!("In diesem Zusammenhang {cue} das Unternehmen die genannten Maßnahmen."),
        "fr" => format!("Dans ce contexte, l'entreprise {cue} les mesures citées."),
        "es" => format!("En este contexto, la empresa {cue} las medidas citadas."),
        _ => format!("In this context the company {cue} the measures in question."),
    }
}

fn distractor_sentence(lang: &str, company: &str, cue: &str) -> String {
    match lang {
        "de" => format!("In einer separaten Konsultation zu Verpackungsregeln {company} {cue} den Entwurf."),
        "fr" => format!("Dans une consultation distincte sur les emballages, {company} {cue} le projet de texte."),
        "es" => format!("En una consulta separada sobre envases, {company} {cue} el borrador."),
        _ => format!("In a separate consultation on packaging rules, {company} {cue} the draft proposal."),
    }
}

fn table(rng: &mut ChaCha8Rng, lex: &Lexicon, year: i32) -> String {
    let [a, b, c] = lex.table_head;
    let mut rows = vec![format!("| {a} | {b} | {c} |"), "|---|---|---|".to_string()];
    for y in (year - 2)..=year {
        rows.push(format!("| {y} | {} | {} |", rng.gen_range(100..9000), rng.gen_range(200..40000)));
    }
    rows.join("\n")
}

/// One block of a synthetic document before rendering.
#[derive(Debug, Clone)]
enum Piece {
    Header(usize, String),
    Para(String),
    Table(String),
    Image,
}

fn render_markdown(pieces: &[Piece]) -> String {
    pieces
        .iter()
        .map(|p| match p {
            Piece::Header(level, t) => format!("{} {t}", "#".repeat(*level)),
            Piece::Para(t) => t.clone(),
            Piece::Table(t) => t.clone(),
            Piece::Image => "<!-- image -->".to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n\n")
        + "\n"
}

/// Wraps at roughly 72 columns, sometimes hyphenating a long word across the break.
fn wrap(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut line = String::new();
    for word in text.split_whitespace() {
        let fits = line.is_empty() || line.chars().count() + 1 + word.chars().count() <= 72;
        if fits {
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(word);
            continue;
        }
        let chars: Vec<char> = word.chars().collect();
        if chars.len() >= 9 && chars.iter().all(|c| c.is_alphabetic()) && rng.gen_bool(0.15) {
            let cut = chars.len() / 2;
            line.push(' ');
            line.extend(&chars[..cut]);
            line.push('-');
            lines.push(std::mem::take(&mut line));
            line.extend(&chars[cut..]);
        } else {
            lines.push(std::mem::take(&mut line));
            line.push_str(word);
        }
    }
    if !line.is_empty() {
        lines.push(line);
    }
    lines.join("\n")
}

fn render_plain(rng: &mut ChaCha8Rng, pieces: &[Piece]) -> String {
    let mut out: Vec<String> = Vec::new();
    for p in pieces {
        match p {
            Piece::Header(_, t) => out.push(t.clone()),
            Piece::Para(t) => out.push(wrap(rng, t)),
            Piece::Table(t) => out.push(
                t.lines()
                    .filter(|l| !l.contains("---"))
                    .map(|l| l.split('|').map(str::trim).filter(|c| !c.is_empty()).collect::<Vec<_>>().join("  "))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            Piece::Image => {}
        }
    }
    out.join("\n\n") + "\n"
}

fn company_name(rng: &mut ChaCha8Rng, lex: &Lexicon, used: &mut Vec<String>) -> String {
    loop {
        let name = format!("{}{} {}", pick(rng, NAME_HEADS), pick(rng, NAME_TAILS), pick(rng, lex.suffixes));
        if !used.contains(&name) {
            used.push(name.clone());
            return name;
        }
    }
}

fn other_stance(stance: i8) -> i8 {
    match stance {
        0 => 2,
        s if s > 0 => -2,
        _ => 2,
    }
}

/// Generates `docs_per_language` documents for each of [`LANGUAGES`].
pub fn generate(seed: u64, docs_per_language: usize) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut payloads = Vec::new();
    let mut used_names = Vec::new();

    for lang in LANGUAGES {
        let lex = lexicon(lang);
        for n in 0..docs_per_language {
            let doc_id = format!("syn-{lang}-{n:02}");
            let company = company_name(&mut rng, lex, &mut used_names);
            let year = rng.gen_range(2019..=2024);
            let date = NaiveDate::from_ymd_opt(year, rng.gen_range(1..=12), rng.gen_range(1..=28)).expect("valid date");
            let metadata = DocumentMetadata {
                company: company.clone(),
                language: lang.to_string(),
                region: pick(&mut rng, lex.regions).to_string(),
                date,
                source_name: doc_id.clone(),
            };

            let mut queries = vec![
                *pick(&mut rng, &FAMILY_MEASURES),
                *pick(&mut rng, &FAMILY_TRANSPARENCY),
                *pick(&mut rng, &FAMILY_OTHER),
            ];
            queries.shuffle(&mut rng);

            let mut pieces = vec![Piece::Header(1, format!("{company} {}", pick(&mut rng, lex.titles)))];
            if rng.gen_bool(0.3) {
                pieces.push(Piece::Image);
            }
            pieces.push(Piece::Para(filler_paragraph(&mut rng, lex, 4..=6)));

            for q in queries {
                let query_id = QueryId::new(q as i64).expect("family ids are valid");
                let query = query_id.query().text;
                let stance = *pick(&mut rng, &[-2i8, -1, 0, 1, 2]);
                let cue = stance_cue(stance, lang);
                let roll: f64 = rng.gen();
                let variant = if roll < 0.2 {
                    GoldVariant::CueAfterGold
                } else if roll < 0.35 {
                    GoldVariant::DistractorBeforeGold
                } else {
                    GoldVariant::Plain
                };

                if rng.gen_bool(0.5) {
                    pieces.push(Piece::Header(2, pick(&mut rng, lex.sections).to_string()));
                    pieces.push(Piece::Para(filler_paragraph(&mut rng, lex, 3..=4)));
                    if rng.gen_bool(0.35) {
                        pieces.push(Piece::Table(table(&mut rng, lex, year)));
                    }
                }

                pieces.push(Piece::Header(2, pick(&mut rng, lex.sections).to_string()));
                let tail = filler_paragraph(&mut rng, lex, 1..=2);
                let (paragraph, gold) = match variant {
                    GoldVariant::Plain => {
                        let g = gold_sentence(lang, query, &company, Some(cue), year);
                        (format!("{g} {tail}"), g)
                    }
                    GoldVariant::CueAfterGold => {
                        let g = gold_sentence(lang, query, &company, None, year);
                        (format!("{g} {} {tail}", cue_sentence(lang, cue)), g)
                    }
                    GoldVariant::DistractorBeforeGold => {
                        let g = gold_sentence(lang, query, &company, Some(cue), year);
                        let d = distractor_sentence(lang, &company, stance_cue(other_stance(stance), lang));
                        (format!("{d} {g} {tail}"), g)
                    }
                };
                pieces.push(Piece::Para(paragraph));
                match rng.gen_range(0..4) {
                    0 => pieces.push(Piece::Para(filler_sentence(&mut rng, lex))),
                    1 => {
                        pieces.push(Piece::Para(lex.colon_lead.to_string()));
                        pieces.push(Piece::Para(filler_paragraph(&mut rng, lex, 3..=3)));
                    }
                    _ => {}
                }

                records.push(EvidenceRecord {
                    doc_id: doc_id.clone(),
                    query_id,
                    gold_evidence: crate::corpus::normalize_text(&gold),
                    stance: Stance::new(stance as i64).expect("stance from set"),
                    comment: format!("synthetic variant={variant}"),
                    metadata: metadata.clone(),
                });
            }
            pieces.push(Piece::Para(filler_paragraph(&mut rng, lex, 3..=3)));

            let markdown = render_markdown(&pieces);
            let plain = render_plain(&mut rng, &pieces);
            for (style, raw_text) in [(ParserStyle::LayoutMarkdown, markdown), (ParserStyle::PlainLines, plain)] {
                payloads.push(UploadPayload { doc_id: doc_id.clone(), parser_style: style, raw_text, metadata: metadata.clone() });
            }
        }
    }
    SyntheticCorpus { records, payloads }
}
