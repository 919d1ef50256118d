"""NCBI E-utilities client for PubMed, PMC and GEO (``db=gds``)."""

from __future__ import annotations

import collections
import logging
import os
import threading
import time
import xml.etree.ElementTree as ET
from typing import Callable

import httpx

from researchflow.errors import (
    AvailabilityError,
    DocumentError,
    NotFoundError,
    RetrievalError,
    ValidationError,
)
from researchflow.literature.document import Block, StructuredDocument
from researchflow.search.query import BooleanQuery
from researchflow.search.records import (
    FROM_REPORT,
    FROM_SEARCH,
    DatasetRecord,
    PaperRecord,
    is_accession,
    merge_datasets,
)

log = logging.getLogger(__name__)

LITERATURE_DBS = ("pubmed", "pmc")
DATASET_DB = "gds"


class RateLimiter:
    """At most ``rate`` acquisitions in any one-second window, across threads."""

    def __init__(self, rate: int, window: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if rate < 1:
            raise ValueError("rate must be >= 1")
        self.rate = rate
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._stamps: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            while True:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.rate:
                    self._stamps.append(now)
                    return
                # small margin so the oldest stamp is strictly out of the window
                self._sleep(self.window - (now - self._stamps[0]) + 1e-3)


def _local(tag) -> str:
    return tag.rsplit("}", 1)[-1] if isinstance(tag, str) else ""


def _text(el) -> str:
    if el is None:
        return ""
    return " ".join("".join(el.itertext()).split())


def _find(el, name):
    for child in el.iter():
        if _local(child.tag) == name:
            return child
    return None


def _children(el, name):
    return [c for c in el if _local(c.tag) == name]


def normalize_pmcid(raw: str) -> str:
    raw = raw.strip()
    return raw if raw.upper().startswith("PMC") else f"PMC{raw}"


def parse_pubmed_xml(xml_text: str) -> list[PaperRecord]:
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise DocumentError(f"PubMed XML: {exc}") from exc
    out = []
    for art in root.iter("PubmedArticle"):
        pmid = _text(art.find(".//MedlineCitation/PMID"))
        title = _text(art.find(".//ArticleTitle"))
        abstract = " ".join(_text(a) for a in art.iter("AbstractText"))
        pmcid = ""
        for aid in art.iter("ArticleId"):
            if aid.get("IdType") == "pmc" and (aid.text or "").strip():
                pmcid = normalize_pmcid(aid.text)
        out.append(
            PaperRecord(
                source="pubmed",
                identifier=pmcid or f"PMID{pmid}",
                title=title,
                abstract=abstract,
                fulltext_available=bool(pmcid),
                pmid=pmid,
                pmcid=pmcid,
            )
        )
    return out


def _jats_articles(xml_text: str):
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise DocumentError(f"PMC XML: {exc}") from exc
    if _local(root.tag) == "article":
        return [root]
    return [a for a in root.iter() if _local(a.tag) == "article"]


def _article_ids(article) -> tuple[str, str]:
    pmcid = pmid = ""
    meta = _find(article, "article-meta")
    for aid in (_children(meta, "article-id") if meta is not None else []):
        kind = aid.get("pub-id-type")
        if kind in ("pmc", "pmcid", "pmcaid") and not pmcid:
            pmcid = normalize_pmcid(_text(aid))
        elif kind == "pmid":
            pmid = _text(aid)
    return pmcid, pmid


def parse_pmc_xml(xml_text: str) -> list[PaperRecord]:
    out = []
    for article in _jats_articles(xml_text):
        pmcid, pmid = _article_ids(article)
        title_group = _find(article, "title-group")
        title = _text(_find(title_group, "article-title")) if title_group is not None else ""
        abstract = _text(_find(article, "abstract"))
        out.append(
            PaperRecord(
                source="pmc",
                identifier=pmcid or f"PMID{pmid}",
                title=title,
                abstract=abstract,
                fulltext_available=_find(article, "body") is not None,
                pmid=pmid,
                pmcid=pmcid,
            )
        )
    return out


def _section_text(sec) -> str:
    lines = []
    for child in sec:
        tag = _local(child.tag)
        if tag == "title":
            continue
        if tag == "sec":
            titles = _children(child, "title")
            sub_title = _text(titles[0]) if titles else ""
            if sub_title:
                lines.append(sub_title)
            body = _section_text(child)
            if body:
                lines.append(body)
        else:
            text = _text(child)
            if text:
                lines.append(text)
    return "\n".join(lines)


def parse_jats_document(xml_text: str, paper_id: str) -> StructuredDocument:
    """Top-level ``<sec>`` elements of the body become titled blocks."""
    articles = _jats_articles(xml_text)
    if not articles:
        raise DocumentError(f"{paper_id}: no <article> element in full-text XML")
    body = _find(articles[0], "body")
    if body is None:
        raise AvailabilityError(f"{paper_id}: full-text XML carries no body")
    blocks = []
    for i, sec in enumerate(_children(body, "sec"), start=1):
        titles = _children(sec, "title")
        title = _text(titles[0]) if titles else ""
        blocks.append(Block(title or f"Section {i}", _section_text(sec)))
    if not blocks:
        text = _section_text(body)
        if not text:
            raise AvailabilityError(f"{paper_id}: full-text body is empty")
        blocks.append(Block("Main text", text))
    return StructuredDocument(paper_id, blocks)


class EUtilsClient:
    """Thin client over ``esearch``/``esummary``/``efetch``.

    All requests share one sliding-window limiter: 3 per second without an API
    key, 10 with one.
    """

    def __init__(
        self,
        base_url: str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils",
        *,
        api_key: str | None = None,
        api_key_env: str = "NCBI_API_KEY",
        tool: str = "researchflow",
        email: str = "",
        timeout: float = 30.0,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
        limiter: RateLimiter | None = None,
    ):
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env) or None
        self.limiter = limiter or RateLimiter(10 if self.api_key else 3)
        self.tool = tool
        self.email = email
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._client = httpx.Client(base_url=base_url.rstrip("/") + "/", timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def _get(self, endpoint: str, params: dict, database: str) -> httpx.Response:
        params = dict(params)
        if self.api_key:
            params["api_key"] = self.api_key
        if self.tool:
            params["tool"] = self.tool
        if self.email:
            params["email"] = self.email
        last = ""
        for attempt in range(1, self.max_attempts + 1):
            self.limiter.acquire()
            try:
                resp = self._client.get(endpoint, params=params)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    return resp
                if resp.status_code != 429 and resp.status_code < 500:
                    raise RetrievalError(database, f"{endpoint} returned HTTP {resp.status_code}")
                last = f"HTTP {resp.status_code}"
            if attempt < self.max_attempts:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
        raise RetrievalError(database, f"{endpoint} failed after {self.max_attempts} attempts ({last})")

    def esearch(self, db: str, term: str, retmax: int) -> list[str]:
        resp = self._get("esearch.fcgi", {"db": db, "term": term, "retmax": retmax, "retmode": "json"}, db)
        try:
            result = resp.json()["esearchresult"]
        except (ValueError, KeyError) as exc:
            raise RetrievalError(db, f"unreadable esearch reply: {exc}") from exc
        return [str(i) for i in result.get("idlist", [])]

    def esummary(self, db: str, ids: list[str]) -> dict[str, dict]:
        if not ids:
            return {}
        resp = self._get("esummary.fcgi", {"db": db, "id": ",".join(ids), "retmode": "json"}, db)
        try:
            result = resp.json()["result"]
        except (ValueError, KeyError) as exc:
            raise RetrievalError(db, f"unreadable esummary reply: {exc}") from exc
        return {uid: result[uid] for uid in result.get("uids", []) if uid in result}

    def efetch(self, db: str, ids: list[str]) -> str:
        resp = self._get("efetch.fcgi", {"db": db, "id": ",".join(ids), "retmode": "xml"}, db)
        return resp.text

    # -- high level -------------------------------------------------------

    def search_literature(self, query: BooleanQuery, db: str, cap: int = 10) -> list[PaperRecord]:
        if db not in LITERATURE_DBS:
            raise ValidationError(f"literature database must be one of {LITERATURE_DBS}, got {db!r}")
        if cap < 1:
            raise ValidationError("cap must be >= 1")
        ids = self.esearch(db, query.serialize(), cap)[:cap]
        if not ids:
            return []
        xml_text = self.efetch(db, ids)
        try:
            records = parse_pubmed_xml(xml_text) if db == "pubmed" else parse_pmc_xml(xml_text)
        except DocumentError as exc:
            raise RetrievalError(db, str(exc)) from exc
        out, seen = [], set()
        for rec in records:
            if rec.identifier not in seen:
                seen.add(rec.identifier)
                out.append(rec)
        return out[:cap]

    def _summaries_to_datasets(self, summaries: dict[str, dict], provenance: str) -> list[DatasetRecord]:
        out = []
        for uid, summ in summaries.items():
            acc = str(summ.get("accession", "")).strip()
            if not is_accession(acc):
                log.debug("skipping GEO uid %s with accession %r", uid, acc)
                continue
            out.append(
                DatasetRecord(
                    accession=acc,
                    title=str(summ.get("title", "")),
                    description=str(summ.get("summary", "")),
                    provenance=provenance,
                )
            )
        return out

    def search_datasets(self, query: BooleanQuery, cap: int = 10) -> list[DatasetRecord]:
        if cap < 1:
            raise ValidationError("cap must be >= 1")
        ids = self.esearch(DATASET_DB, query.serialize(), cap)[:cap]
        records = self._summaries_to_datasets(self.esummary(DATASET_DB, ids), FROM_SEARCH)
        return merge_datasets(records)[:cap]

    def fetch_dataset_by_id(self, accession: str) -> DatasetRecord:
        if not is_accession(accession):
            raise ValidationError(f"malformed accession {accession!r}")
        ids = self.esearch(DATASET_DB, f"{accession}[ACCN]", 20)
        for rec in self._summaries_to_datasets(self.esummary(DATASET_DB, ids), FROM_REPORT):
            if rec.accession == accession:
                return rec
        raise NotFoundError(f"GEO has no record for {accession}")

    def fetch_fulltext(self, paper: PaperRecord) -> StructuredDocument:
        if not paper.fulltext_available or not paper.pmcid:
            raise AvailabilityError(f"{paper.identifier}: no PMC full text available")
        xml_text = self.efetch("pmc", [paper.pmcid.removeprefix("PMC")])
        return parse_jats_document(xml_text, paper.identifier)
