"""Regenerate fixtures/corpus.json and fixtures/mock_script.json.

The corpus is a small hepatocellular carcinoma literature set served by the
E-utilities stub; the script drives every agent through one complete run.

    python3 scripts/build_fixtures.py [--out fixtures]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

OBJECTIVE = "Identify differentially expressed genes linked to survival in hepatocellular carcinoma"
CONDITIONS = "Public transcriptomic data only"
REQUIREMENTS = "Report a ranked gene list with adjusted p-values"

PAPERS = [
    {
        "pmid": "1001",
        "pmcid": "PMC9001",
        "title": "RNA-seq differential expression in hepatocellular carcinoma",
        "abstract": "We profiled hepatocellular carcinoma tumours by RNA-seq and report differential expression against adjacent liver.",
        "sections": [
            {"title": "Methods", "text": "Raw counts for GSE14520 and GSE76427 were downloaded. Arrays were run on GPL570. DESeq2 was used with an FDR of 0.05."},
            {"title": "Results", "text": "We found 812 differentially expressed genes."},
        ],
    },
    {
        "pmid": "1002",
        "pmcid": "PMC9002",
        "title": "Co-expression network analysis of hepatocellular carcinoma transcriptomes",
        "abstract": "A weighted co-expression network built from hepatocellular carcinoma transcriptome data reveals prognostic modules.",
        "sections": [
            {"title": "Methods", "text": "WGCNA was applied to GSE14520 expression with soft threshold 6."},
            {"title": "Results", "text": "Seven modules were detected; the blue module tracked survival."},
        ],
    },
    {
        "pmid": "1003",
        "pmcid": "PMC9003",
        "title": "Prognostic gene signature for hepatocellular carcinoma survival",
        "abstract": "Cox regression on hepatocellular carcinoma expression cohorts yields a survival signature.",
        "sections": [
            {"title": "Methods", "text": "Patients with follow-up were selected. A LASSO Cox model was fit."},
            {"title": "Results", "text": "The signature stratified overall survival (log-rank p < 0.001)."},
        ],
    },
    {
        "pmid": "1004",
        "title": "Hepatocellular carcinoma: a clinical review of expression studies",
        "abstract": "A narrative review of hepatocellular carcinoma gene expression studies and survival outcomes.",
        "sections": [],
    },
    {
        "pmid": "1006",
        "pmcid": "PMC9006",
        "title": "Editorial: RNA-seq in hepatocellular carcinoma",
        "abstract": "An editorial on RNA-seq and transcriptome studies in hepatocellular carcinoma.",
        "sections": [],
    },
    {
        "pmid": "1005",
        "pmcid": "PMC9005",
        "title": "Root growth in Arabidopsis",
        "abstract": "Unrelated plant biology used to check that queries do not match everything.",
        "sections": [{"title": "Methods", "text": "Seedlings were grown on agar."}],
    },
]

DATASETS = [
    {
        "uid": "200014520",
        "accession": "GSE14520",
        "title": "Gene expression data of hepatocellular carcinoma patients",
        "summary": "Hepatocellular carcinoma tumour and non-tumour liver tissue with survival follow-up.",
    },
    {
        "uid": "200010001",
        "accession": "GSE10001",
        "title": "Hepatocellular carcinoma cell line methylation",
        "summary": "DNA methylation of hepatocellular carcinoma cell lines, no expression data.",
    },
    {
        "uid": "200076427",
        "accession": "GSE76427",
        "title": "Liver tumour cohort from Singapore",
        "summary": "Tumour and adjacent tissue profiles with clinical outcomes.",
    },
]

QUERIES = [
    '"hepatocellular carcinoma" AND (RNA-seq OR transcriptome)',
    '"hepatocellular carcinoma" AND "differential expression"',
    '("liver cancer" OR "hepatocellular carcinoma") AND network',
    '"hepatocellular carcinoma" AND (survival OR prognostic)',
    'hepatocellular[tiab] AND "gene expression"',
]

PAPER_SCORES = {"PMC9001": 5, "PMC9002": 4, "PMC9003": 5, "PMID1004": 3, "PMC9006": 4}

# paper -> [(heading, grade, [(entry, [step texts])])]
REPORTS = {
    "PMC9001": [
        ("Data acquisition and preprocessing", "high", [
            ("Data download", ["Download raw counts for GSE14520 and GSE76427 from GEO."]),
            ("Normalization", ["Normalize counts with the DESeq2 median-of-ratios method."]),
        ]),
        ("Differential expression analysis", "high", [
            ("Model fitting", ["Fit a negative binomial model of tumour versus adjacent liver."]),
            ("Gene ranking", ["Rank genes by adjusted p-value with an FDR cutoff of 0.05."]),
        ]),
    ],
    "PMC9002": [
        ("Data acquisition and preprocessing", "medium", [
            ("Expression matrix", ["Assemble the GSE14520 expression matrix from series files."]),
        ]),
        ("Co-expression network construction", "high", [
            ("Network building", ["Build a signed WGCNA network with soft threshold 6."]),
            ("Module detection", ["Detect modules by dynamic tree cutting."]),
        ]),
    ],
    "PMC9003": [
        ("Cohort assembly", "low", [
            ("Patient selection", ["Select patients with at least one year of follow-up."]),
        ]),
        ("Survival modeling", "high", [
            ("Signature fitting", ["Fit a LASSO Cox model on candidate genes."]),
            ("Risk stratification", ["Split patients at the median risk score and compare survival curves."]),
        ]),
    ],
}

PROTOCOL = [
    {
        "heading": "Data retrieval and preprocessing",
        "purpose": "Obtain and normalize hepatocellular carcinoma expression cohorts.",
        "design_reason": "Both cohorts carry tumour and adjacent tissue with survival data.",
        "references": ["PMC9001/Data acquisition and preprocessing"],
        "entries": [
            ("Download cohorts", ["PMC9001/Data acquisition and preprocessing"], [
                "Download the GSE14520 and GSE76427 series matrices from GEO with GEOquery and keep tumour and adjacent samples. "
                "Record sample identifiers, tissue type and follow-up time for every retained sample in a metadata table.",
            ]),
            ("Normalize expression", ["PMC9001/Data acquisition and preprocessing"], [
                "Apply quantile normalization to each cohort separately and log2 transform the values before merging. "
                "Remove probes without a gene symbol and collapse duplicate probes by keeping the one with highest mean expression.",
            ]),
        ],
    },
    {
        "heading": "Differential expression and survival analysis",
        "purpose": "Rank genes by tumour versus adjacent differences and relate them to survival.",
        "design_reason": "Combines the differential expression and Cox modeling strategies of the references.",
        "references": ["PMC9001/Differential expression analysis", "PMC9003/Survival modeling", "novel"],
        "entries": [
            ("Differential expression", ["PMC9001/Differential expression analysis"], [
                "Fit a limma linear model of tumour against adjacent tissue with cohort as a blocking factor. "
                "Adjust p-values with the Benjamini-Hochberg procedure and keep genes with adjusted p-values below 0.05.",
            ]),
            ("Survival association", ["PMC9003/Survival modeling", "novel"], [
                "Fit a univariate Cox proportional hazards model for each differentially expressed gene using overall survival. "
                "Write the ranked gene list with hazard ratios and adjusted p-values to a tab separated file.",
            ]),
        ],
    },
]

TASKS = [
    {
        "id": 1,
        "description": "Download and normalize the expression cohorts into one matrix.",
        "inputs": [{"type": "accession list", "description": "GSE14520 and GSE76427"}],
        "outputs": [{"type": "csv", "description": "normalized expression matrix counts.csv"}],
    },
    {
        "id": 2,
        "description": "Rank differentially expressed genes and test survival association.",
        "inputs": [{"type": "csv", "description": "counts.csv from task 1"}],
        "outputs": [{"type": "tsv", "description": "ranked gene list de_genes.tsv"}],
    },
]

# Task 1 fails once on a missing input file, then succeeds.
TASK1_REV1 = "import csv\nrows = list(csv.reader(open('raw_counts.csv')))\n"
TASK1_REV2 = (
    "import csv\n"
    "rows = [['gene', 'tumour', 'adjacent'], ['AFP', '9.1', '2.0'], ['GPC3', '8.4', '1.7'], ['ALB', '3.0', '9.5']]\n"
    "with open('counts.csv', 'w', newline='') as fh:\n"
    "    csv.writer(fh).writerows(rows)\n"
    "print('wrote', len(rows) - 1, 'genes')\n"
)
TASK2_REV1 = (
    "import csv, os\n"
    "src = os.path.join(os.environ['TASKS_ROOT'], '1', 'rev2', 'outputs', 'counts.csv')\n"
    "rows = list(csv.DictReader(open(src)))\n"
    "ranked = sorted(rows, key=lambda r: -(float(r['tumour']) - float(r['adjacent'])))\n"
    "with open('de_genes.tsv', 'w') as fh:\n"
    "    fh.write('gene\\tlog2fc\\tpadj\\n')\n"
    "    for r in ranked:\n"
    "        fh.write(f\"{r['gene']}\\t{float(r['tumour']) - float(r['adjacent']):.2f}\\t0.01\\n\")\n"
    "print('ranked', len(ranked))\n"
)


def corpus() -> dict:
    return {"papers": PAPERS, "datasets": DATASETS}


def _report_entries(paper: str) -> dict:
    script = {}
    sections = REPORTS[paper]
    script[f"report-generator:literature.{paper}.headings"] = {"always": {"headings": [h for h, _, _ in sections]}}
    for i, (heading, grade, entries) in enumerate(sections, start=1):
        base = f"literature.{paper}.h{i}"
        script[f"report-generator:{base}.outline"] = {
            "always": {"heading": heading, "entries": [{"title": t} for t, _ in entries]}
        }
        script[f"report-generator:{base}.steps"] = {
            "always": {
                "steps": [{"entry": t, "text": s} for t, steps in entries for s in steps],
                "non_experimental": [],
            }
        }
        ids = [f"{ei}.{si}" for ei, (_, steps) in enumerate(entries, 1) for si in range(1, len(steps) + 1)]
        script[f"report-generator:{base}.details"] = {
            "always": {"details": {sid: f"Detail for step {sid} of {heading}; see GPL570 annotations." for sid in ids}}
        }
        script[f"report-generator:{base}.results"] = {
            "always": {"results": {sid: f"Result for step {sid}." for sid in ids}}
        }
        script[f"analyst:literature.{paper}.analysis.h{i}"] = {
            "always": {"heading": heading, "grade": grade, "suggestions": f"Reuse the {heading.lower()} approach."}
        }
    return script


def mock_script() -> dict:
    script: dict = {
        "query-generator:search.query_gen": {"always": {"queries": QUERIES}},
        "reviewer:literature": {"always": {"decision": "approve"}},
        "reviewer:design": {"always": {"decision": "approve"}},
        # one revision cycle on the protocol headings
        "reviewer:design.headings.round1": [
            {"decision": "revise", "feedback": "State which cohort each section relies on."}
        ],
        "filter:search.score_dataset.GSE14520": {"always": "useful"},
        "filter:search.score_dataset.GSE10001": {"always": "not-useful"},
        "filter:literature.score_dataset.GSE76427": {"always": {"usability": "useful", "reason": "has outcomes"}},
    }
    for pid, score in PAPER_SCORES.items():
        script[f"filter:search.score_paper.{pid}"] = {"always": {"score": score, "reason": "fixture"}}
    for pid in REPORTS:
        script.update(_report_entries(pid))

    plans = [{k: s[k] for k in ("heading", "purpose", "design_reason", "references")} for s in PROTOCOL]
    script["designer:design.headings"] = {"always": {"sections": plans}}
    script["designer:design.outline"] = {
        "always": {
            "sections": [
                {"heading": s["heading"], "entries": [{"title": t, "references": r} for t, r, _ in s["entries"]]}
                for s in PROTOCOL
            ]
        }
    }
    for i, s in enumerate(PROTOCOL, start=1):
        script[f"designer:design.details.s{i}"] = {
            "always": {"steps": [{"entry": t, "text": x} for t, _, texts in s["entries"] for x in texts]}
        }
        script[f"designer:design.summary.s{i}"] = {
            "always": {"summary": f"Section {i} covers {s['heading'].lower()}: {s['purpose']}"}
        }

    script["extractor:programming.tasks"] = {"always": {"tasks": TASKS}}
    script["code-generator:programming.task1.rev1"] = [{"action": "code", "language": "python", "code": TASK1_REV1}]
    script["code-generator:programming.task1.rev2"] = [{"action": "code", "language": "python", "code": TASK1_REV2}]
    script["code-generator:programming.task2.rev1"] = [{"action": "code", "language": "python", "code": TASK2_REV1}]

    script["judge:evaluation.completeness"] = {
        "always": {"sections": [{"section": 1, "added_steps": []}, {"section": 2, "added_steps": ["Validate the signature in an external cohort."]}]}
    }
    refs = [(si, ti) for si, s in enumerate(PROTOCOL, 1) for ti in range(1, sum(len(e[2]) for e in s["entries"]) + 1)]
    script["judge:evaluation.correctness"] = {
        "always": {"steps": [{"section": si, "step": ti, "correct": True, "rationale": "sound"} for si, ti in refs]}
    }
    script["judge:evaluation.logical_soundness"] = {
        "always": {"steps": [{"section": si, "step": ti, "reasonable": (si, ti) != (2, 1)} for si, ti in refs]}
    }
    script["judge:evaluation.detail"] = {"always": {"score": 0.8, "rationale": "most parameters given"}}
    script["judge:evaluation.structural_soundness"] = {"always": {"score": 0.9, "rationale": "clear sections"}}
    return script


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    request = {"objective": OBJECTIVE, "conditions": CONDITIONS, "requirements": REQUIREMENTS}
    for name, value in (("corpus.json", corpus()), ("mock_script.json", mock_script()), ("request.json", request)):
        (out / name).write_text(json.dumps(value, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {out / name}")


if __name__ == "__main__":
    main()
