use reflectguard::EvalReport;

pub fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

pub fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.2}%"))
}

/// Left-aligned first column, right-aligned others.
pub fn render(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                s.push_str(&format!("{c:<w$}"));
            } else {
                s.push_str(&format!("  {c:>w$}"));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    out.push_str(&line(widths.iter().map(|_| "").collect::<Vec<_>>()).replace(' ', "-"));
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// One row per report: the mAP columns then TP/FP at each count threshold.
pub fn summary(reports: &[(&str, &EvalReport)]) -> String {
    let Some((_, first)) = reports.first() else {
        return String::new();
    };
    let mut header = vec![
        "method".to_owned(),
        "mAP[.50:.95]".into(),
        "mAP[.50]".into(),
        "mAP[.75]".into(),
    ];
    for t in &first.totals {
        header.push(format!("TP@{}", t.iou_threshold));
        header.push(format!("FP@{}", t.iou_threshold));
    }
    let rows = reports
        .iter()
        .map(|(label, r)| {
            let mut row = vec![
                label.to_string(),
                metric(r.map_50_95),
                metric(r.map_50),
                metric(r.map_75),
            ];
            for t in &r.totals {
                row.push(t.tp.to_string());
                row.push(t.fp.to_string());
            }
            row
        })
        .collect();
    render(&header.iter().map(String::as_str).collect::<Vec<_>>(), rows)
}
