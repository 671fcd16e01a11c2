"""Regenerate the bundled toy corpus under fixtures/toy.

The corpus is small enough to run the whole pipeline in seconds yet rich
enough to populate every report table: twelve companies with staggered
market caps, a full daily price panel, and 200 headlines mixing positive,
negative, and neutral lexicon words. Two company names are themselves
directional lexicon words, so the original and replaced variants disagree
on a controlled slice of headlines. Output files are committed; rerunning
this script reproduces them byte for byte.
"""

import argparse
import csv
import datetime as dt
import random
from pathlib import Path

SEED = 7
N_DAYS = 85
N_HEADLINES = 200
START = dt.date(2021, 3, 1)

COMPANIES = [
    ("SRG", "Surge Holdings Inc.", 180.0, 140.0),
    ("TMB", "Tumble Retail Corp.", 95.0, 160.0),
    ("BCN", "Beacon Foods Inc.", 42.0, 90.0),
    ("HRM", "Harbor Medical Corp.", 230.0, 110.0),
    ("QTZ", "Quartz Mining Ltd.", 8.0, 220.0),
    ("VEL", "Velvet Apparel Group Inc.", 15.0, 180.0),
    ("NMB", "Nimbus Software Inc.", 320.0, 130.0),
    ("GRB", "Granite Bancorp Inc.", 60.0, 100.0),
    ("CRL", "Coral Shipping Co.", 4.0, 250.0),
    ("PRE", "Prairie Energy Corp.", 27.0, 170.0),
    ("MPL", "Maple Furniture Inc.", 11.0, 120.0),
    ("ONX", "Onyx Chemicals Ltd.", 73.0, 95.0),
]

POSITIVE_TEMPLATES = [
    "{name} beats quarterly profit estimates",
    "{name} shares climb after strong results",
    "{name} wins major supply contract",
    "{name} raises full-year outlook",
    "{name} posts record revenue for the quarter",
    "Analysts upgrade {name} on robust demand",
]

NEGATIVE_TEMPLATES = [
    "{name} misses revenue expectations",
    "{name} shares fall on weak guidance",
    "{name} cuts dividend after slow quarter",
    "{name} faces lawsuit over product recall",
    "{name} warns of widening losses",
    "Regulators open probe into {name} accounting",
]

NEUTRAL_TEMPLATES = [
    "{name} appoints new board member",
    "{name} to present at industry conference",
    "{name} completes previously announced refinancing",
    "{name} schedules annual shareholder meeting",
    "Industry survey covers suppliers including {name}",
]

# Double mentions flip the sign for the two lexicon-named companies.
DOUBLE_TEMPLATES = [
    "{name} wins contract as {name} shares trade higher",
    "{name} misses targets while {name} reviews spending",
]

NAMELESS_TEMPLATES = [
    "Sector report sees steady demand through year end",
    "Commodity prices hold in a narrow weekly range",
    "Trade group survey shows stable order books",
]

HOURS = [
    dt.time(5, 30),
    dt.time(7, 45),
    dt.time(9, 10),
    dt.time(11, 30),
    dt.time(14, 20),
    dt.time(16, 30),
    dt.time(19, 5),
    dt.time(22, 40),
]


def trading_days() -> list:
    days = []
    cursor = START
    while len(days) < N_DAYS:
        if cursor.weekday() < 5:
            days.append(cursor)
        cursor += dt.timedelta(days=1)
    return days


def short_name(official: str) -> str:
    tokens = official.rstrip(".").split()
    return " ".join(tokens[:-1])


def gen_prices(rng: random.Random, days: list) -> list:
    rows = []
    for cid, _, cap0, vol_bp in COMPANIES:
        close = rng.uniform(20.0, 180.0)
        base_close = None
        for day in days:
            gap = rng.gauss(0.0, vol_bp * 0.4)
            intraday = rng.gauss(0.0, vol_bp)
            open_price = close * (1.0 + gap / 10000.0)
            close = open_price * (1.0 + intraday / 10000.0)
            if base_close is None:
                base_close = close
            cap = cap0 * (close / base_close)
            rows.append((cid, day, open_price, close, cap))
    return rows


def gen_headlines(rng: random.Random, days: list) -> list:
    usable_days = days[:-2]
    rows = []
    for i in range(N_HEADLINES):
        cid, official = rng.choice(COMPANIES)[:2]
        name = short_name(official)
        roll = rng.random()
        if roll < 0.05:
            template = rng.choice(NAMELESS_TEMPLATES)
        elif roll < 0.13 and cid in ("SRG", "TMB"):
            template = rng.choice(DOUBLE_TEMPLATES)
        elif roll < 0.50:
            template = rng.choice(POSITIVE_TEMPLATES)
        elif roll < 0.80:
            template = rng.choice(NEGATIVE_TEMPLATES)
        else:
            template = rng.choice(NEUTRAL_TEMPLATES)
        text = template.format(name=name)
        stamp = dt.datetime.combine(rng.choice(usable_days), rng.choice(HOURS))
        rows.append((f"toy-{i:03d}", cid, stamp, text))
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", default="fixtures/toy", help="destination directory"
    )
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    days = trading_days()

    with open(out / "calendar.txt", "w", encoding="utf-8") as fh:
        for day in days:
            fh.write(day.isoformat() + "\n")

    with open(out / "companies.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["company_id", "official_name"])
        for cid, official, _, _ in COMPANIES:
            writer.writerow([cid, official])

    with open(out / "prices.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["company_id", "date", "open", "close", "market_cap_busd"]
        )
        for cid, day, open_price, close, cap in gen_prices(rng, days):
            writer.writerow(
                [cid, day.isoformat(), repr(open_price), repr(close), repr(cap)]
            )

    headlines = gen_headlines(rng, days)
    per_company = {cid: 0 for cid, _, _, _ in COMPANIES}
    for _, cid, _, _ in headlines:
        per_company[cid] += 1
    thin = [cid for cid, n in per_company.items() if n < 5]
    if thin:
        raise SystemExit(f"reseed needed: sparse companies {thin}")
    with open(out / "headlines.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["headline_id", "company_id", "timestamp_et", "text"])
        for hid, cid, stamp, text in headlines:
            writer.writerow([hid, cid, stamp.isoformat(), text])

    with open(out / "aliases.jsonl", "w", encoding="utf-8") as fh:
        fh.write(
            '{"company_id": "VEL", "query": "Velvet Apparel Group", '
            '"aliases": ["VelvetWear"], '
            '"fetched_at": "2026-08-01T00:00:00", "source": "fixture"}\n'
        )
        fh.write(
            '{"company_id": "NMB", "query": "Nimbus Software", '
            '"aliases": ["NimbusCloud"], '
            '"fetched_at": "2026-08-01T00:00:00", "source": "fixture"}\n'
        )

    print(f"wrote {len(days)} days, {len(headlines)} headlines to {out}")


if __name__ == "__main__":
    main()
