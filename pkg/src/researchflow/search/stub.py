"""Local stand-in for the E-utilities endpoints, serving a fixture corpus.

Corpus document (JSON)::

    {"papers": [{"pmid": "1001", "pmcid": "PMC1001", "title": "...",
                 "abstract": "...", "sections": [{"title": "...", "text": "..."}]}],
     "datasets": [{"uid": "200001", "accession": "GSE1001", "title": "...",
                   "summary": "..."}]}

Queries are evaluated against title + abstract (papers) or title + summary
(datasets) with case-insensitive substring matching; ``[ACCN]`` terms match
accessions exactly. Papers without ``pmcid`` only exist in PubMed; papers
with an empty ``sections`` list have no full-text body.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse
from xml.sax.saxutils import escape

from researchflow.errors import QuerySyntaxError
from researchflow.search.query import Group, Term, parse_expression


def _matches(node, text: str, accession: str = "") -> bool:
    if isinstance(node, Term):
        if node.field and node.field.strip().lower() == "accn":
            return node.text == accession
        return node.text.lower() in text
    results = (_matches(c, text, accession) for c in node.children)
    return all(results) if node.op == "AND" else any(results)


def _pubmed_xml(papers) -> str:
    parts = ["<?xml version='1.0' encoding='UTF-8'?>", "<PubmedArticleSet>"]
    for p in papers:
        pmc = f'<ArticleId IdType="pmc">{escape(p["pmcid"])}</ArticleId>' if p.get("pmcid") else ""
        parts.append(
            "<PubmedArticle><MedlineCitation>"
            f"<PMID>{escape(p['pmid'])}</PMID><Article>"
            f"<ArticleTitle>{escape(p['title'])}</ArticleTitle>"
            f"<Abstract><AbstractText>{escape(p['abstract'])}</AbstractText></Abstract>"
            "</Article></MedlineCitation><PubmedData><ArticleIdList>"
            f'<ArticleId IdType="pubmed">{escape(p["pmid"])}</ArticleId>{pmc}'
            "</ArticleIdList></PubmedData></PubmedArticle>"
        )
    parts.append("</PubmedArticleSet>")
    return "".join(parts)


def jats_article(paper: dict) -> str:
    secs = "".join(
        f"<sec><title>{escape(s['title'])}</title><p>{escape(s['text'])}</p></sec>"
        for s in paper.get("sections", [])
    )
    body = f"<body>{secs}</body>" if paper.get("sections") else ""
    pmcid = paper.get("pmcid", "").removeprefix("PMC")
    return (
        "<article><front><article-meta>"
        f'<article-id pub-id-type="pmc">{escape(pmcid)}</article-id>'
        f'<article-id pub-id-type="pmid">{escape(paper.get("pmid", ""))}</article-id>'
        f"<title-group><article-title>{escape(paper['title'])}</article-title></title-group>"
        f"<abstract><p>{escape(paper['abstract'])}</p></abstract>"
        f"</article-meta></front>{body}</article>"
    )


class _Handler(BaseHTTPRequestHandler):
    server: "_StubServer"

    def log_message(self, *args):  # keep test output quiet
        pass

    def _send(self, status: int, body: str, ctype: str):
        data = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        stub: EUtilsStub = self.server.stub
        url = urlparse(self.path)
        params = {k: v[0] for k, v in parse_qs(url.query).items()}
        endpoint = url.path.rsplit("/", 1)[-1]
        with stub.lock:
            stub.requests.append((time.monotonic(), endpoint, params))
            status = stub.fail_next.pop(0) if stub.fail_next else None
        if status is not None:
            self._send(status, "injected failure", "text/plain")
            return
        try:
            handler = {"esearch.fcgi": stub.esearch, "esummary.fcgi": stub.esummary, "efetch.fcgi": stub.efetch}[endpoint]
        except KeyError:
            self._send(404, "unknown endpoint", "text/plain")
            return
        code, body, ctype = handler(params)
        self._send(code, body, ctype)


class _StubServer(ThreadingHTTPServer):
    daemon_threads = True


class EUtilsStub:
    """Serve a corpus on ``127.0.0.1``; use as a context manager."""

    def __init__(self, corpus: dict):
        self.papers = list(corpus.get("papers", []))
        self.datasets = list(corpus.get("datasets", []))
        self.requests: list[tuple[float, str, dict]] = []
        self.fail_next: list[int] = []
        self.lock = threading.Lock()
        self._server: _StubServer | None = None
        self._thread: threading.Thread | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "EUtilsStub":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/entrez/eutils"

    def start(self) -> "EUtilsStub":
        self._server = _StubServer(("127.0.0.1", 0), _Handler)
        self._server.stub = self
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- endpoints ---------------------------------------------------------

    def esearch(self, params):
        db, term = params.get("db", "pubmed"), params.get("term", "")
        retmax = int(params.get("retmax", 20))
        try:
            node = parse_expression(term)
        except QuerySyntaxError as exc:
            body = {"esearchresult": {"count": "0", "idlist": [], "errorlist": {"phrasesnotfound": [str(exc)]}}}
            return 200, json.dumps(body), "application/json"
        if db == "gds":
            ids = [
                d["uid"]
                for d in self.datasets
                if _matches(node, f"{d['title']} {d['summary']}".lower(), d["accession"])
            ]
        elif db in ("pubmed", "pmc"):
            ids = []
            for p in self.papers:
                if db == "pmc" and not p.get("pmcid"):
                    continue
                if _matches(node, f"{p['title']} {p['abstract']}".lower()):
                    ids.append(p["pmid"] if db == "pubmed" else p["pmcid"].removeprefix("PMC"))
        else:
            return 400, "unknown db", "text/plain"
        body = {"esearchresult": {"count": str(len(ids)), "retmax": str(min(retmax, len(ids))), "idlist": ids[:retmax]}}
        return 200, json.dumps(body), "application/json"

    def esummary(self, params):
        if params.get("db") != "gds":
            return 400, "stub only summarizes gds", "text/plain"
        wanted = params.get("id", "").split(",")
        result = {"uids": []}
        for d in self.datasets:
            if d["uid"] in wanted:
                result["uids"].append(d["uid"])
                result[d["uid"]] = {
                    "uid": d["uid"],
                    "accession": d["accession"],
                    "title": d["title"],
                    "summary": d["summary"],
                    "entrytype": d["accession"][:3],
                }
        return 200, json.dumps({"result": result}), "application/json"

    def efetch(self, params):
        db = params.get("db")
        wanted = params.get("id", "").split(",")
        if db == "pubmed":
            papers = [p for p in self.papers if p["pmid"] in wanted]
            return 200, _pubmed_xml(papers), "text/xml"
        if db == "pmc":
            papers = [p for p in self.papers if p.get("pmcid", "").removeprefix("PMC") in wanted]
            body = "".join(jats_article(p) for p in papers)
            return 200, f"<?xml version='1.0' encoding='UTF-8'?><pmc-articleset>{body}</pmc-articleset>", "text/xml"
        return 400, "unknown db", "text/plain"
