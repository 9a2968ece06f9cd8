"""Regenerate the bundled synthetic fixtures.

Writes into ``src/sexism_detect/data/``:

* ``synthetic.tsv``   200 labelled posts (EXIST schema), English and Spanish,
  every sexist category marked by its own small keyword set and sprinkled
  with mentions, hashtags, links and digits;
* ``mock_dict.tsv``   the en<TAB>es word list covering that vocabulary, for
  the offline translation provider.

The evaluation pair ``fixture_truth.tsv`` / ``fixture_pred.jsonl`` is written
by hand and is not touched by this script.

Usage: python scripts/make_fixtures.py [--seed 2021] [--n 200]
"""

import argparse
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "sexism_detect" / "data"

FILLER = [
    ("today", "hoy"), ("the", "el"), ("weather", "clima"), ("is", "es"), ("nice", "bonito"),
    ("we", "nosotros"), ("went", "fuimos"), ("park", "parque"), ("coffee", "café"),
    ("morning", "mañana"), ("friends", "amigos"), ("music", "música"), ("game", "partido"),
    ("team", "equipo"), ("city", "ciudad"), ("book", "libro"), ("movie", "película"),
    ("dinner", "cena"), ("work", "trabajo"), ("weekend", "finde"), ("song", "canción"),
    ("new", "nuevo"), ("phone", "teléfono"), ("women", "mujeres"), ("girls", "chicas"),
    ("she", "ella"), ("people", "gente"), ("really", "realmente"), ("always", "siempre"),
    ("again", "otra"),
]

KEYWORDS = {
    "ideological-inequality": [
        ("feminazis", "feminazis"), ("privilege", "privilegio"), ("quotas", "cuotas"),
        ("victimhood", "victimismo"), ("myth", "mito"),
    ],
    "objectification": [
        ("curves", "curvas"), ("bikini", "bikini"), ("legs", "piernas"),
        ("hottie", "buenorra"), ("meat", "carne"),
    ],
    "stereotyping-dominance": [
        ("kitchen", "cocina"), ("sandwich", "bocadillo"), ("obey", "obedecer"),
        ("hysterical", "histérica"), ("housewife", "ama"),
    ],
    "misogyny-non-sexual-violence": [
        ("slap", "bofetada"), ("worthless", "inútil"), ("shutup", "cállate"),
        ("beat", "pegar"), ("hate", "odio"),
    ],
    "sexual-violence": [
        ("rape", "violar"), ("grope", "manosear"), ("harass", "acosar"),
        ("assault", "agresión"), ("force", "forzar"),
    ],
}
CLASSES = list(KEYWORDS) + ["non-sexist"]
# half non-sexist, the rest spread over the five categories
WEIGHTS = [0.1, 0.1, 0.1, 0.1, 0.1, 0.5]


def _decorate(rng: random.Random, words: list[str]) -> list[str]:
    if rng.random() < 0.3:
        words.insert(0, f"@user{rng.randint(1, 99)}")
    if rng.random() < 0.3:
        words.append(f"#{rng.choice(['tbt', 'news', 'viernes', 'lol'])}")
    if rng.random() < 0.15:
        words.append(f"https://t.co/{rng.randint(1000, 9999)}")
    if rng.random() < 0.2:
        words.insert(rng.randrange(len(words) + 1), str(rng.randint(1, 2021)))
    return words


def make_posts(n: int, seed: int) -> list[tuple]:
    rng = random.Random(seed)
    rows = []
    for i in range(n):
        lang = "en" if i % 2 == 0 else "es"
        col = 0 if lang == "en" else 1
        label = rng.choices(CLASSES, WEIGHTS)[0]
        words = [w[col] for w in rng.sample(FILLER, rng.randint(4, 8))]
        if label != "non-sexist":
            for kw in rng.sample(KEYWORDS[label], 2):
                words.insert(rng.randrange(len(words) + 1), kw[col])
        words = _decorate(rng, words)
        task1 = "non-sexist" if label == "non-sexist" else "sexist"
        source = "gab" if rng.random() < 0.2 else "twitter"
        rows.append(("EXIST2021", f"{i + 1:06d}", source, lang, " ".join(words), task1, label))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2021)
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--out", type=Path, default=OUT)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    header = "test_case\tid\tsource\tlanguage\ttext\ttask1\ttask2"
    rows = make_posts(args.n, args.seed)
    (args.out / "synthetic.tsv").write_text(
        header + "\n" + "\n".join("\t".join(r) for r in rows) + "\n", encoding="utf-8")

    pairs = FILLER + [kw for kws in KEYWORDS.values() for kw in kws]
    (args.out / "mock_dict.tsv").write_text(
        "\n".join(f"{en}\t{es}" for en, es in pairs) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} posts and {len(pairs)} dictionary pairs to {args.out}")


if __name__ == "__main__":
    main()
