//! Small matplotlib scripts next to the CSV outputs. Nothing is plotted here.

use std::fs;
use std::path::Path;

use sigcorr::Result;

const FIG1: &str = r##"# Generated by `sigcorr reproduce-fig1`. Usage: python plot_fig1.py
import os

import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__))
fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
for ax, name, title in zip(axes, ["kxminus", "kxx"], ["K_{x,-}", "K_{x,x}"]):
    d = pd.read_csv(os.path.join(here, name + ".csv"), comment="#")
    ax.plot(d["lag"], d["exact"], "k-", label="exact")
    ax.errorbar(d["lag"], d["estimate"], yerr=d["stderr"], fmt=".", ms=3, label="single trajectory")
    ax.set_title("$" + title + r"(f^\tau, f^0)$")
    ax.set_xlabel(r"$\tau$")
axes[0].legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "fig1.png"), dpi=150)
"##;

pub fn write_fig1_script(path: &Path) -> Result<()> {
    fs::write(path, FIG1)?;
    Ok(())
}

/// Script plotting every `(detector_a, detector_b)` curve of an ergodic
/// estimate table.
pub fn write_curves_script(path: &Path, csv: &Path, with_exact: bool) -> Result<()> {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let exact = if with_exact {
        "    ax.plot(g[\"lag\"], g[\"exact\"], \"-\", label=f\"exact {a},{b}\")\n"
    } else {
        ""
    };
    let script = format!(
        r##"# Generated by `sigcorr estimate`.
import os

import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__))
d = pd.read_csv(os.path.join(here, "{name}"), comment="#")
fig, ax = plt.subplots(figsize=(6, 4))
for (a, b), g in d.groupby(["detector_a", "detector_b"]):
    a, b = int(a), int(b)
    ax.errorbar(g["lag"], g["value"], yerr=g["stderr"], fmt=".", ms=3, label=f"estimate {{a}},{{b}}")
{exact}ax.set_xlabel("lag")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "{stem}.png"), dpi=150)
"##,
        stem = csv.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    );
    fs::write(path, script)?;
    Ok(())
}
