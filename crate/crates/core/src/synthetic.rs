//! Synthetic cohorts in the public Kaggle column layout.
//!
//! The generator reproduces the shape of the real data (column names, label
//! rates, block-wise missingness, text-valued viral panels, nearly-empty
//! columns) so the pipeline can be exercised end to end without patient data.
//! Outcomes depend on a handful of lab values and on which test panels were
//! ordered, so models have signal to find.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::seed;

#[derive(Clone, Copy, PartialEq)]
enum Panel {
    Blood,
    Viral,
    Biochem,
    Venous,
    Arterial,
    Urine,
    Coag,
    Empty,
}

#[derive(Clone, Copy)]
enum Values {
    Continuous,
    /// Numeric column with few levels (e.g. counts of immature cells).
    Levels(u8),
    /// `detected` / `not_detected` style text.
    Detection,
    /// Free text categories.
    Text(&'static [&'static str]),
}

const BLOOD: &[&str] = &[
    "Hematocrit",
    "Hemoglobin",
    "Platelets",
    "Mean platelet volume ",
    "Red blood Cells",
    "Lymphocytes",
    "Mean corpuscular hemoglobin concentration (MCHC)",
    "Leukocytes",
    "Basophils",
    "Mean corpuscular hemoglobin (MCH)",
    "Eosinophils",
    "Mean corpuscular volume (MCV)",
    "Monocytes",
    "Red blood cell distribution width (RDW)",
];
const VIRAL: &[&str] = &[
    "Respiratory Syncytial Virus",
    "Influenza A",
    "Influenza B",
    "Parainfluenza 1",
    "CoronavirusNL63",
    "Rhinovirus/Enterovirus",
    "Coronavirus HKU1",
    "Parainfluenza 3",
    "Chlamydophila pneumoniae",
    "Adenovirus",
    "Parainfluenza 4",
    "Coronavirus229E",
    "CoronavirusOC43",
    "Inf A H1N1 2009",
    "Bordetella pertussis",
    "Metapneumovirus",
    "Parainfluenza 2",
    "Influenza B, rapid test",
    "Influenza A, rapid test",
    "Strepto A",
];
const BIOCHEM: &[&str] = &[
    "Serum Glucose",
    "Neutrophils",
    "Urea",
    "Proteina C reativa mg/dL",
    "Creatinine",
    "Potassium",
    "Sodium",
    "Alanine transaminase",
    "Aspartate transaminase",
    "Gamma-glutamyltransferase ",
    "Total Bilirubin",
    "Direct Bilirubin",
    "Indirect Bilirubin",
    "Alkaline phosphatase",
    "Ionized calcium ",
    "Magnesium",
    "Lactic Dehydrogenase",
    "Creatine phosphokinase (CPK) ",
    "Ferritin",
    "Lipase dosage",
    "Phosphor",
    "International normalized ratio (INR)",
    "Relationship (Patient/Normal)",
];
const IMMATURE: &[&str] = &[
    "Rods #",
    "Segmented",
    "Promyelocytes",
    "Metamyelocytes",
    "Myelocytes",
];
const VENOUS: &[&str] = &[
    "pCO2 (venous blood gas analysis)",
    "Hb saturation (venous blood gas analysis)",
    "Base excess (venous blood gas analysis)",
    "pO2 (venous blood gas analysis)",
    "Total CO2 (venous blood gas analysis)",
    "pH (venous blood gas analysis)",
    "HCO3 (venous blood gas analysis)",
];
const ARTERIAL: &[&str] = &[
    "Arterial Lactic Acid",
    "Hb saturation (arterial blood gases)",
    "pCO2 (arterial blood gas analysis)",
    "Base excess (arterial blood gas analysis)",
    "pH (arterial blood gas analysis)",
    "Total CO2 (arterial blood gas analysis)",
    "HCO3 (arterial blood gas analysis)",
    "pO2 (arterial blood gas analysis)",
    "Arteiral Fio2",
    "ctO2 (arterial blood gas analysis)",
];
const URINE_TEXT: &[(&str, &[&str])] = &[
    ("Urine - Esterase", &["absent", "not_done"]),
    (
        "Urine - Aspect",
        &["clear", "lightly_cloudy", "cloudy", "altered_coloring"],
    ),
    (
        "Urine - pH",
        &["5", "5.5", "6", "6.5", "7", "Não Realizado"],
    ),
    ("Urine - Hemoglobin", &["absent", "present", "not_done"]),
    ("Urine - Bile pigments", &["absent", "not_done"]),
    ("Urine - Ketone Bodies", &["absent", "not_done"]),
    ("Urine - Urobilinogen", &["normal", "not_done"]),
    ("Urine - Protein", &["absent", "not_done"]),
    (
        "Urine - Leukocytes",
        &["<1000", "1000", "5000", "12000", "38000"],
    ),
    (
        "Urine - Crystals",
        &["Ausentes", "Urato Amorfo --+", "Oxalato de Cálcio +++"],
    ),
    ("Urine - Hyaline cylinders", &["absent"]),
    ("Urine - Granular cylinders", &["absent"]),
    ("Urine - Yeasts", &["absent"]),
    (
        "Urine - Color",
        &["light_yellow", "yellow", "orange", "citrus_yellow"],
    ),
];
const URINE_NUMERIC: &[&str] = &["Urine - Density", "Urine - Red blood cells"];
const EMPTY: &[&str] = &[
    "Mycoplasma pneumoniae",
    "Urine - Nitrite",
    "Urine - Sugar",
    "Partial thromboplastin time (PTT) ",
    "Prothrombin time (PT), Activity",
    "D-Dimer",
    "Fio2 (venous blood gas analysis)",
    "Vitamin B12",
    "Albumin",
    "Myeloblasts",
];

struct ColumnSpec {
    name: &'static str,
    panel: Panel,
    values: Values,
}

fn column_specs() -> Vec<ColumnSpec> {
    let mut cols = Vec::new();
    let push = |cols: &mut Vec<ColumnSpec>, names: &[&'static str], panel, values| {
        for &name in names {
            cols.push(ColumnSpec {
                name,
                panel,
                values,
            });
        }
    };
    push(&mut cols, BLOOD, Panel::Blood, Values::Continuous);
    push(&mut cols, VIRAL, Panel::Viral, Values::Detection);
    push(&mut cols, BIOCHEM, Panel::Biochem, Values::Continuous);
    push(&mut cols, IMMATURE, Panel::Coag, Values::Levels(4));
    push(&mut cols, VENOUS, Panel::Venous, Values::Continuous);
    push(&mut cols, ARTERIAL, Panel::Arterial, Values::Continuous);
    for &(name, cats) in URINE_TEXT {
        cols.push(ColumnSpec {
            name,
            panel: Panel::Urine,
            values: Values::Text(cats),
        });
    }
    push(&mut cols, URINE_NUMERIC, Panel::Urine, Values::Continuous);
    push(&mut cols, EMPTY, Panel::Empty, Values::Continuous);
    cols
}

/// Column header of the generated file, in order.
pub fn header() -> Vec<String> {
    let mut h: Vec<String> = [
        "Patient ID",
        "Patient age quantile",
        "SARS-Cov-2 exam result",
        "Patient addmited to regular ward (1=yes, 0=no)",
        "Patient addmited to semi-intensive unit (1=yes, 0=no)",
        "Patient addmited to intensive care unit (1=yes, 0=no)",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(column_specs().iter().map(|c| c.name.to_string()));
    h
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generate `n` patients as CSV text.
pub fn generate_csv(n: usize, seed_value: u64) -> String {
    let mut rng = seed::rng(seed::derive(seed_value, "synthetic"));
    let specs = column_specs();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header()).expect("in-memory write");

    for i in 0..n {
        let age: u8 = rng.random_range(0..20);
        let frailty: f64 = StandardNormal.sample(&mut rng);
        let positive = rng.random::<f64>() < logistic(-2.35 + 0.06 * (age as f64 - 9.5));
        let severity = frailty + 0.12 * (age as f64 - 9.5);
        let (p_ward, p_icu) = if positive {
            (
                logistic(-3.4 + 1.6 * severity),
                logistic(-4.6 + 2.0 * severity),
            )
        } else {
            (
                logistic(-5.6 + 1.3 * severity),
                logistic(-5.0 + 1.4 * severity),
            )
        };
        let ward = rng.random::<f64>() < p_ward;
        let icu = !ward && rng.random::<f64>() < p_icu;
        let semi = !ward && !icu && rng.random::<f64>() < 0.01;
        let sick = ward || icu;

        // panel ordering depends on presentation; tested negatives more
        // often get the full respiratory work-up
        let blood = rng.random::<f64>()
            < if sick {
                0.8
            } else if positive {
                0.16
            } else {
                0.10
            };
        let viral = rng.random::<f64>() < if positive { 0.06 } else { 0.26 };
        let biochem = blood && rng.random::<f64>() < if sick { 0.7 } else { 0.4 };
        let venous = blood && rng.random::<f64>() < if icu { 0.9 } else { 0.2 };
        let arterial = rng.random::<f64>()
            < if icu {
                0.5
            } else if positive {
                0.002
            } else {
                0.012
            };
        let urine = rng.random::<f64>() < 0.01;
        let coag = blood && rng.random::<f64>() < 0.15;

        let mut row: Vec<String> = vec![
            format!("p{i:05}"),
            age.to_string(),
            if positive { "positive" } else { "negative" }.into(),
            u8::from(ward).to_string(),
            u8::from(semi).to_string(),
            u8::from(icu).to_string(),
        ];
        for spec in &specs {
            let observed = match spec.panel {
                Panel::Blood => blood,
                Panel::Viral => viral,
                Panel::Biochem => biochem,
                Panel::Venous => venous,
                Panel::Arterial => arterial,
                Panel::Urine => urine,
                Panel::Coag => coag,
                Panel::Empty => rng.random::<f64>() < 0.0008,
            };
            if !observed {
                row.push(String::new());
                continue;
            }
            let cell = match spec.values {
                Values::Continuous => {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let shift = match spec.name {
                        "Leukocytes" | "Platelets" => {
                            if positive {
                                -0.7
                            } else {
                                0.0
                            }
                        }
                        "Eosinophils" => {
                            if positive {
                                -0.5
                            } else {
                                0.0
                            }
                        }
                        "Lactic Dehydrogenase" | "Proteina C reativa mg/dL" => 0.8 * severity,
                        "pCO2 (venous blood gas analysis)" | "pH (venous blood gas analysis)" => {
                            if icu {
                                1.2
                            } else {
                                0.0
                            }
                        }
                        "Creatinine" | "Urea" => 0.4 * severity,
                        _ => 0.0,
                    };
                    format!("{:.6}", noise + shift)
                }
                Values::Levels(k) => rng.random_range(0..k).to_string(),
                Values::Detection => {
                    let p = if positive { 0.02 } else { 0.12 };
                    if rng.random::<f64>() < p {
                        "detected"
                    } else {
                        "not_detected"
                    }
                    .into()
                }
                Values::Text(cats) => cats[rng.random_range(0..cats.len())].to_string(),
            };
            row.push(cell);
        }
        wtr.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_cohort, SchemaConfig};

    #[test]
    fn generated_file_loads_with_default_schema() {
        let text = generate_csv(400, 3);
        let cohort = read_cohort(text.as_bytes(), &SchemaConfig::default()).unwrap();
        assert_eq!(cohort.n_rows(), 400);
        // labels, id and the semi-intensive column are removed; age stays
        assert_eq!(header().len(), 111);
        assert_eq!(cohort.columns.len(), 106);
        assert_eq!(generate_csv(50, 3), generate_csv(50, 3));
    }
}
