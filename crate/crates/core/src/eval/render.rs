use crate::raster::Raster;

use super::EvalReport;

/// Display side for previews and contact sheets; rendering only.
pub const PREVIEW_SIDE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mse,
    Ssim,
}

/// One row per report with Test / Train / Test+Train columns.
pub fn markdown_table(metric: Metric, reports: &[EvalReport]) -> String {
    let (name, digits) = match metric {
        Metric::Mse => ("MSE", 5),
        Metric::Ssim => ("SSIM", 4),
    };
    let mut out = format!("| Model ({name}) | Test | Train | Test+Train |\n|---|---|---|---|\n");
    for r in reports {
        let cell = |a: Option<super::Aggregate>| match a {
            Some(a) => format!(
                "{:.digits$}",
                match metric {
                    Metric::Mse => a.mse,
                    Metric::Ssim => a.ssim,
                }
            ),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            r.model.name(),
            cell(r.test),
            cell(r.train),
            cell(Some(r.combined))
        ));
    }
    out
}

/// Grid of tiles, each upscaled by nearest neighbour to `PREVIEW_SIDE`, with
/// a 4-pixel white gutter. Rows may have different lengths.
pub fn contact_sheet(rows: &[Vec<Raster>]) -> Raster {
    const GAP: usize = 4;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = GAP + cols * (PREVIEW_SIDE + GAP);
    let height = GAP + rows.len() * (PREVIEW_SIDE + GAP);
    let mut sheet = Raster::filled(width, height, &[1.0; 3]);
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            let factor = (PREVIEW_SIDE / tile.width().max(1)).max(1);
            let big = tile.upscale_nearest(factor);
            let (x0, y0) = (GAP + c * (PREVIEW_SIDE + GAP), GAP + r * (PREVIEW_SIDE + GAP));
            for y in 0..big.height().min(PREVIEW_SIDE) {
                for x in 0..big.width().min(PREVIEW_SIDE) {
                    let src = big.pixel(x, y);
                    sheet.pixel_mut(x0 + x, y0 + y)[..3].copy_from_slice(&src[..3]);
                }
            }
        }
    }
    sheet
}
