"""Signature schedule files: one CSV row per signature.

    signature_id,intro_day,removal_day,severity,update_days
    sig1,10,100,2,30;60

``update_days`` is a semicolon-separated list and may be empty; ``severity``
may be left empty and then defaults to 1.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .traces import MIN_LIFESPAN_DAYS, SignatureLifecycle, TraceError

HEADER = ["signature_id", "intro_day", "removal_day", "severity", "update_days"]


class ScheduleError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _int(text: str, what: str, line: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ScheduleError(f"{what} is not an integer: {text!r}", line) from None


def parse_schedule_text(text: str, lead: int = 3, lag: int = 3) -> list[SignatureLifecycle]:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise ScheduleError(f"header must be {','.join(HEADER)}", 1)
    out = []
    seen: dict[str, int] = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise ScheduleError(f"expected {len(HEADER)} fields, got {len(row)}", line)
        sig = row[0].strip()
        if not sig:
            raise ScheduleError("empty signature_id", line)
        if sig in seen:
            raise ScheduleError(f"duplicate signature_id {sig!r} (first on line {seen[sig]})", line)
        seen[sig] = line
        intro = _int(row[1], "intro_day", line)
        removal = _int(row[2], "removal_day", line)
        severity = _int(row[3], "severity", line) if row[3].strip() else 1
        updates = tuple(
            _int(u, "update day", line) for u in row[4].split(";") if u.strip()
        )
        try:
            out.append(SignatureLifecycle(sig, intro, removal, severity, updates, lead, lag))
        except TraceError as exc:
            raise ScheduleError(str(exc), line) from None
    return out


def parse_schedule(path, lead: int = 3, lag: int = 3) -> list[SignatureLifecycle]:
    return parse_schedule_text(Path(path).read_text(encoding="utf-8"), lead, lag)


def format_schedule(schedule: Iterable[SignatureLifecycle]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for lc in schedule:
        w.writerow([
            lc.signature_id,
            lc.intro_day,
            lc.removal_day,
            lc.severity,
            ";".join(str(u) for u in lc.update_days),
        ])
    return buf.getvalue()


def write_schedule(schedule: Iterable[SignatureLifecycle], path) -> None:
    Path(path).write_text(format_schedule(schedule), encoding="utf-8")


def generate_schedule(
    signatures: int,
    days: int,
    seed: int,
    min_lifespan: int = MIN_LIFESPAN_DAYS,
    max_lifespan: int | None = None,
    update_interval: float = 90.0,
    severities: tuple[int, ...] = (1, 2, 3),
) -> list[SignatureLifecycle]:
    """Random schedule for testing.

    Lifespans are log-uniform in [min_lifespan, max_lifespan] (default half
    the horizon), introduction days uniform over the slots that keep the
    signature inside ``[0, days]``, and the number of updates is Poisson with
    mean ``lifespan / update_interval``.
    """
    if days < min_lifespan:
        raise ValueError(f"days must be at least {min_lifespan}")
    hi = max_lifespan if max_lifespan is not None else max(min_lifespan, days // 2)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5C4E])))
    width = len(str(max(signatures - 1, 0)))
    out = []
    for i in range(signatures):
        life = int(round(math.exp(rng.uniform(math.log(min_lifespan), math.log(hi)))))
        life = min(max(life, min_lifespan), days)
        intro = int(rng.integers(0, days - life + 1))
        removal = intro + life
        severity = int(rng.choice(severities))
        n_upd = min(int(rng.poisson(life / update_interval)), life - 1)
        updates = ()
        if n_upd:
            updates = tuple(sorted(
                (intro + 1 + rng.choice(life - 1, size=n_upd, replace=False)).tolist()
            ))
        out.append(SignatureLifecycle(f"sig{i:0{width}d}", intro, removal, severity, updates))
    return out
