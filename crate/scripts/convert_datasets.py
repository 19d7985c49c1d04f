#!/usr/bin/env python3
"""Convert public fact-checking releases into maple pair files.

Output is JSON lines with id, claim, evidence (may be absent for
NOT_ENOUGH_INFO) and label in SUPPORTS / REFUTES / NOT_ENOUGH_INFO.

  convert_datasets.py fever --claims shared_task_test.jsonl --wiki wiki-pages/ --out fever.jsonl
  convert_datasets.py cfever --claims climate-fever.jsonl --out cfever.jsonl
  convert_datasets.py scifact --claims claims_train.jsonl claims_dev.jsonl \
      --corpus corpus.jsonl --out scifact_oracle.jsonl --abstracts-out abstracts.jsonl
  convert_datasets.py table --input pairs.csv --out pairs.jsonl
"""

import argparse
import csv
import glob
import json
import os
import sys

LABELS = {
    "SUPPORTS": "SUPPORTS",
    "SUPPORT": "SUPPORTS",
    "REFUTES": "REFUTES",
    "CONTRADICT": "REFUTES",
    "NOT ENOUGH INFO": "NOT_ENOUGH_INFO",
    "NOT_ENOUGH_INFO": "NOT_ENOUGH_INFO",
    "NEI": "NOT_ENOUGH_INFO",
}


def norm_label(raw):
    return LABELS.get(str(raw).strip().upper())


def read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    return len(rows)


def fever_wiki_lines(wiki_dir, pages):
    """Sentence text per (page, line) for the requested pages only."""
    found = {}
    for path in sorted(glob.glob(os.path.join(wiki_dir, "*.jsonl"))):
        for doc in read_jsonl(path):
            if doc["id"] not in pages:
                continue
            for entry in doc.get("lines", "").split("\n"):
                parts = entry.split("\t")
                if len(parts) >= 2 and parts[0].isdigit():
                    found[(doc["id"], int(parts[0]))] = parts[1]
    return found


def fever(args):
    claims = [c for path in args.claims for c in read_jsonl(path)]
    pages = {
        ev[2]
        for c in claims
        for group in c.get("evidence", [])
        for ev in group
        if ev[2] is not None
    }
    lines = fever_wiki_lines(args.wiki, pages)
    rows = []
    for c in claims:
        label = norm_label(c["label"])
        row = {"id": str(c["id"]), "claim": c["claim"], "label": label}
        if label != "NOT_ENOUGH_INFO":
            group = c["evidence"][0]
            text = " ".join(lines[(ev[2], ev[3])] for ev in group if (ev[2], ev[3]) in lines)
            if not text:
                continue
            row["evidence"] = text
        rows.append(row)
    return rows


def cfever(args):
    rows = []
    for path in args.claims:
        for c in read_jsonl(path):
            label = norm_label(c["claim_label"])
            if label is None:  # DISPUTED claims carry no single verdict
                continue
            text = " ".join(e["evidence"] for e in c.get("evidences", []))
            rows.append({"id": str(c["claim_id"]), "claim": c["claim"], "evidence": text, "label": label})
    return rows


def scifact(args):
    corpus = {str(d["doc_id"]): d for d in read_jsonl(args.corpus)}
    rows = []
    for path in args.claims:
        for c in read_jsonl(path):
            evidence = c.get("evidence") or {}
            cited = [str(d) for d in c.get("cited_doc_ids", [])]
            if evidence:
                doc_id, sets = next(iter(evidence.items()))
                label = norm_label(sets[0]["label"])
                sentences = sorted({i for s in sets for i in s["sentences"]})
                abstract = corpus[str(doc_id)]["abstract"]
                text = " ".join(abstract[i].strip() for i in sentences)
            else:
                label = "NOT_ENOUGH_INFO"
                if not cited or cited[0] not in corpus:
                    continue
                text = " ".join(s.strip() for s in corpus[cited[0]]["abstract"])
            rows.append({"id": str(c["id"]), "claim": c["claim"], "evidence": text, "label": label})
    if args.abstracts_out:
        docs = [
            {"id": doc_id, "text": " ".join(s.strip() for s in d["abstract"])}
            for doc_id, d in sorted(corpus.items())
        ]
        n = write_jsonl(args.abstracts_out, docs)
        print(f"{n} abstracts -> {args.abstracts_out}", file=sys.stderr)
    return rows


def table(args):
    rows = []
    with open(args.input, newline="", encoding="utf-8") as f:
        for i, rec in enumerate(csv.DictReader(f)):
            label = norm_label(rec.get("label", ""))
            if label is None:
                continue
            rows.append(
                {
                    "id": rec.get("id") or f"row-{i}",
                    "claim": rec["claim"],
                    "evidence": rec.get("evidence", ""),
                    "label": label,
                }
            )
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="source", required=True)
    f = sub.add_parser("fever")
    f.add_argument("--claims", nargs="+", required=True)
    f.add_argument("--wiki", required=True, help="directory of wiki-pages/*.jsonl")
    c = sub.add_parser("cfever")
    c.add_argument("--claims", nargs="+", required=True)
    s = sub.add_parser("scifact")
    s.add_argument("--claims", nargs="+", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--abstracts-out")
    t = sub.add_parser("table")
    t.add_argument("--input", required=True)
    for parser in (f, c, s, t):
        parser.add_argument("--out", required=True)
    args = p.parse_args()

    rows = {"fever": fever, "cfever": cfever, "scifact": scifact, "table": table}[args.source](args)
    seen = set()
    unique = []
    for r in rows:
        if r["id"] not in seen:
            seen.add(r["id"])
            unique.append(r)
    counts = {}
    for r in unique:
        counts[r["label"]] = counts.get(r["label"], 0) + 1
    n = write_jsonl(args.out, unique)
    print(f"{n} pairs -> {args.out} {counts}", file=sys.stderr)


if __name__ == "__main__":
    main()
