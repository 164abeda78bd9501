//! CSV export of the attention quantities behind one query: per-patch
//! retain/delete cosines, per-instance raw and normalized weights, and the β
//! of every combiner.

use std::io::Write;

use crate::error::Result;
use crate::fusion::QueryModel;
use crate::selection::{instance_attention, patch_attention};
use crate::types::QuerySample;

/// Shortest text that parses back to the same f64.
fn cell(v: f64) -> String {
    v.to_string()
}

/// Columns: `section,name,index,alpha_plus,alpha_minus,alpha_plus_norm,
/// alpha_minus_norm,net,beta_0..beta_{k-1}` where `k` is the widest combiner.
/// Cells that do not apply to a row are empty.
pub fn write_attention_csv<W: Write>(
    out: W,
    sample: &QuerySample,
    model: &QueryModel,
) -> Result<()> {
    let (_, trace) = model.forward(&model.streams(sample)?)?;
    let betas = trace.betas();
    let width = betas.iter().map(|(_, b)| b.len()).max().unwrap_or(0);

    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "section",
        "name",
        "index",
        "alpha_plus",
        "alpha_minus",
        "alpha_plus_norm",
        "alpha_minus_norm",
        "net",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..width).map(|j| format!("beta_{j}")));
    w.write_record(&header)?;
    let blank = |n: usize| vec![String::new(); n];

    let patches = patch_attention(&sample.patch_set, &sample.retained_text, &sample.deleted_text)?;
    for (i, net) in patches.net().enumerate() {
        let mut row = vec![
            "patch".to_string(),
            "pvrs".to_string(),
            i.to_string(),
            cell(patches.alpha_plus[i]),
            cell(patches.alpha_minus[i]),
            String::new(),
            String::new(),
            cell(net),
        ];
        row.extend(blank(width));
        w.write_record(&row)?;
    }

    if !sample.instance_set.is_empty() {
        let inst = instance_attention(&sample.instance_set, &sample.retained_text, &sample.deleted_text)?;
        for i in 0..inst.net.len() {
            let mut row = vec![
                "instance".to_string(),
                "ivrs".to_string(),
                i.to_string(),
                cell(inst.alpha_plus_raw[i]),
                cell(inst.alpha_minus_raw[i]),
                cell(inst.alpha_plus_norm[i]),
                cell(inst.alpha_minus_norm[i]),
                cell(inst.net[i]),
            ];
            row.extend(blank(width));
            w.write_record(&row)?;
        }
    }

    for (name, b) in betas {
        let mut row = vec!["beta".to_string(), name.to_string()];
        row.extend(blank(6));
        row.extend(b.iter().map(|v| cell(*v)));
        row.extend(blank(width - b.len()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| crate::Error::io("<csv>", e))?;
    Ok(())
}
