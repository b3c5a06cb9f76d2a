"""Desk-scale movie KG with templated 1/2/3-hop questions.

The schema copies the MetaQA movie domain: nine relation types between
movies and their people, years, languages, genres, tags, ratings and vote
buckets. Gold answers are found by walking each template's relation path
over the generated graph.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import QAExample, write_qa_dataset
from .kg import KnowledgeGraph, augment_reverse, write_triples

_ADJ = ("Silent", "Crimson", "Broken", "Hidden", "Golden", "Last", "Lost", "Dark", "Bright", "Wild",
        "Frozen", "Burning", "Quiet", "Iron", "Hollow", "Final", "Secret", "Electric", "Paper", "Velvet")
_NOUN = ("Harbor", "Empire", "River", "Garden", "Station", "Signal", "Mirror", "Horizon", "Kingdom",
         "Journey", "Letter", "Promise", "Machine", "Island", "Winter", "Shadow", "Frontier", "Orchard",
         "Voyage", "Circus")
_FIRST = ("Ada", "Bruno", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Ines", "Jonas",
          "Kira", "Lukas", "Mara", "Nico", "Olga", "Pavel", "Rosa", "Stefan", "Tess", "Viktor",
          "Wanda", "Yusuf", "Zora", "Anton", "Beata")
_LAST = ("Albers", "Brandt", "Castillo", "Dorsey", "Eklund", "Farrow", "Gallo", "Holm", "Ivanov",
         "Jansen", "Keller", "Lindqvist", "Moreau", "Novak", "Ortega", "Petrov", "Quint", "Rios",
         "Sato", "Thorne", "Ueda", "Varga", "Weiss", "Xu", "Yates")
_LANGUAGES = ("English", "French", "German", "Spanish", "Italian", "Japanese", "Korean", "Swedish",
              "Hindi", "Polish")
_GENRES = ("Drama", "Comedy", "Thriller", "Horror", "Romance", "Western", "Documentary", "Animation",
           "Mystery", "Adventure", "Musical", "War", "Fantasy", "Crime")
_TAGS = ("heist", "time travel", "small town", "revenge", "coming of age", "road trip", "space",
         "courtroom", "boxing", "chess", "pirates", "vampires", "robots", "detective", "circus life",
         "haunted house", "jazz", "cold war", "survival", "family secrets", "art forgery", "mountains",
         "submarine", "wedding", "election", "dragons", "ghost ship", "island life", "train", "winter games",
         "spy", "amnesia", "orphans", "gold rush", "zombies", "ballet", "chef", "desert", "kidnapping", "magic")
_VOTES = ("famous", "good", "average", "obscure")

RELATIONS = ("directed_by", "written_by", "starred_actors", "release_year", "in_language",
             "has_genre", "has_tags", "has_imdb_rating", "has_imdb_votes")


@dataclass(frozen=True)
class Template:
    name: str
    path: tuple[str, ...]
    phrasings: tuple[str, ...]

    @property
    def hops(self) -> int:
        return len(self.path)


def _t(name: str, path: str, *phrasings: str) -> Template:
    return Template(name, tuple(path.split()), phrasings)


R = "_reverse"
DEFAULT_TEMPLATES: tuple[Template, ...] = (
    # 1-hop
    _t("movie_to_director", "directed_by", "who directed [{}]", "who is the director of [{}]", "[{}] was directed by whom"),
    _t("movie_to_writer", "written_by", "who wrote [{}]", "who is the writer of [{}]", "who was [{}] written by"),
    _t("movie_to_actor", "starred_actors", "who acted in [{}]", "who starred in [{}]", "which actors appear in [{}]"),
    _t("movie_to_year", "release_year", "when was [{}] released", "what year did [{}] come out", "the release year of [{}]"),
    _t("movie_to_language", "in_language", "what language is [{}] in", "which language is spoken in [{}]"),
    _t("movie_to_genre", "has_genre", "what genre is [{}]", "what kind of movie is [{}]"),
    _t("director_to_movie", "directed_by" + R, "what movies did [{}] direct", "which films were directed by [{}]"),
    _t("writer_to_movie", "written_by" + R, "what movies did [{}] write", "which films were written by [{}]"),
    _t("actor_to_movie", "starred_actors" + R, "what movies did [{}] act in", "which films star [{}]"),
    # 2-hop
    _t("movie_to_director_to_movie", f"directed_by directed_by{R}",
       "which movies have the same director as [{}]", "what other films did the director of [{}] make",
       "movies by the director of [{}]"),
    _t("movie_to_writer_to_movie", f"written_by written_by{R}",
       "which movies have the same writer as [{}]", "what else did the writer of [{}] write",
       "movies written by the writer of [{}]"),
    _t("movie_to_actor_to_movie", f"starred_actors starred_actors{R}",
       "which movies share actors with [{}]", "what other films did the actors of [{}] appear in",
       "movies featuring the cast of [{}]"),
    _t("movie_to_year_to_movie", f"release_year release_year{R}",
       "which movies came out the same year as [{}]", "what films were released in the same year as [{}]"),
    _t("actor_to_movie_to_director", f"starred_actors{R} directed_by",
       "who directed the movies starring [{}]", "who are the directors of films [{}] acted in",
       "the movies with [{}] were directed by whom"),
    _t("actor_to_movie_to_writer", f"starred_actors{R} written_by",
       "who wrote the movies starring [{}]", "who are the writers of films [{}] acted in",
       "the movies with [{}] were written by whom"),
    _t("actor_to_movie_to_actor", f"starred_actors{R} starred_actors",
       "who acted together with [{}]", "who are the co-stars of [{}]", "which actors appeared in films with [{}]"),
    _t("actor_to_movie_to_year", f"starred_actors{R} release_year",
       "when did the movies starring [{}] come out", "what years were films with [{}] released"),
    _t("actor_to_movie_to_genre", f"starred_actors{R} has_genre",
       "what genres are the movies starring [{}]", "what kind of films did [{}] act in"),
    _t("actor_to_movie_to_language", f"starred_actors{R} in_language",
       "what languages are the movies starring [{}] in", "which languages are spoken in films with [{}]"),
    _t("director_to_movie_to_actor", f"directed_by{R} starred_actors",
       "who acted in the movies directed by [{}]", "who starred in films by director [{}]",
       "which actors appear in movies directed by [{}]"),
    _t("director_to_movie_to_writer", f"directed_by{R} written_by",
       "who wrote the movies directed by [{}]", "who are the writers of films by director [{}]"),
    _t("director_to_movie_to_year", f"directed_by{R} release_year",
       "when did the movies directed by [{}] come out", "what years were films by director [{}] released"),
    _t("director_to_movie_to_genre", f"directed_by{R} has_genre",
       "what genres are the movies directed by [{}]", "what kind of films did [{}] direct"),
    _t("director_to_movie_to_language", f"directed_by{R} in_language",
       "what languages are the movies directed by [{}] in", "which languages are spoken in films by director [{}]"),
    _t("writer_to_movie_to_director", f"written_by{R} directed_by",
       "who directed the movies written by [{}]", "who are the directors of films [{}] wrote"),
    _t("writer_to_movie_to_actor", f"written_by{R} starred_actors",
       "who acted in the movies written by [{}]", "who starred in films written by [{}]"),
    _t("writer_to_movie_to_year", f"written_by{R} release_year",
       "when did the movies written by [{}] come out", "what years were films by writer [{}] released"),
    # 3-hop
    _t("movie_to_director_to_movie_to_actor", f"directed_by directed_by{R} starred_actors",
       "who acted in the movies directed by the director of [{}]",
       "who starred in films by the same director as [{}]"),
    _t("movie_to_actor_to_movie_to_director", f"starred_actors starred_actors{R} directed_by",
       "who directed the movies starring the actors of [{}]",
       "who are the directors of films that share actors with [{}]"),
    _t("movie_to_writer_to_movie_to_year", f"written_by written_by{R} release_year",
       "when did the movies by the writer of [{}] come out",
       "what years were films by the same writer as [{}] released"),
    _t("actor_to_movie_to_director_to_movie", f"starred_actors{R} directed_by directed_by{R}",
       "which movies were made by the directors of films starring [{}]",
       "what films did the directors of [{}] movies make"),
    _t("director_to_movie_to_actor_to_movie", f"directed_by{R} starred_actors starred_actors{R}",
       "which movies star the actors from films directed by [{}]",
       "what other films did actors from [{}] movies appear in"),
)


@dataclass
class SyntheticSpec:
    n_movies: int = 90
    n_persons: int = 120
    n_years: int = 20
    n_languages: int = 8
    n_genres: int = 12
    n_tags: int = 30
    n_ratings: int = 8
    hops: tuple[int, ...] = (2,)
    n_train: int = 2000
    n_dev: int = 250
    n_test: int = 500
    templates: tuple[Template, ...] = field(default=DEFAULT_TEMPLATES)

    @property
    def n_entities(self) -> int:
        return (self.n_movies + self.n_persons + self.n_years + self.n_languages + self.n_genres
                + self.n_tags + self.n_ratings + len(_VOTES))


@dataclass
class SyntheticBenchmark:
    kg: KnowledgeGraph  # forward facts only
    train: list[QAExample]
    dev: list[QAExample]
    test: list[QAExample]
    template_of: dict[str, str]  # question -> template name

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"kg": out / "kb.txt", "train": out / "qa_train.txt",
                 "dev": out / "qa_dev.txt", "test": out / "qa_test.txt"}
        write_triples(self.kg, paths["kg"])
        write_qa_dataset(self.train, paths["train"])
        write_qa_dataset(self.dev, paths["dev"])
        write_qa_dataset(self.test, paths["test"])
        return paths


def _unique_names(rng, count: int, left: Sequence[str], right: Sequence[str], sep: str) -> list[str]:
    if count > len(left) * len(right):
        raise ValueError(f"cannot make {count} distinct names from {len(left)}x{len(right)} parts")
    pairs = rng.permutation(len(left) * len(right))[:count]
    return [f"{left[p // len(right)]}{sep}{right[p % len(right)]}" for p in pairs]


def _build_kg(spec: SyntheticSpec, rng: np.random.Generator) -> KnowledgeGraph:
    if spec.n_entities < 50:
        raise ValueError(f"need at least 50 entities, spec gives {spec.n_entities}")
    movies = ["The " + m for m in _unique_names(rng, spec.n_movies, _ADJ, _NOUN, " ")]
    persons = _unique_names(rng, spec.n_persons, _FIRST, _LAST, " ")
    years = [str(y) for y in sorted(rng.choice(np.arange(1950, 2020), spec.n_years, replace=False))]
    languages = list(_LANGUAGES[:spec.n_languages])
    genres = list(_GENRES[:spec.n_genres])
    tags = list(_TAGS[:spec.n_tags])
    ratings = [f"{r:.1f}" for r in np.linspace(4.5, 8.7, spec.n_ratings)]
    pool = rng.permutation(len(persons))
    third = len(persons) // 3
    directors = [persons[i] for i in pool[:third]]
    writers = [persons[i] for i in pool[third // 2:third // 2 + third]]  # half overlap with directors
    actors = [persons[i] for i in pool[third:]] + directors[: third // 4]
    facts: list[tuple[str, str, str]] = []

    def pick(options, lo, hi):
        k = int(rng.integers(lo, hi + 1))
        return [options[i] for i in rng.choice(len(options), size=k, replace=False)]

    for m in movies:
        facts += [(m, "directed_by", p) for p in pick(directors, 1, 1)]
        facts += [(m, "written_by", p) for p in pick(writers, 1, 2)]
        facts += [(m, "starred_actors", p) for p in pick(actors, 2, 4)]
        facts.append((m, "release_year", years[int(rng.integers(len(years)))]))
        facts.append((m, "in_language", languages[int(rng.integers(len(languages)))]))
        facts += [(m, "has_genre", g) for g in pick(genres, 1, 2)]
        facts += [(m, "has_tags", t) for t in pick(tags, 1, 3)]
        facts.append((m, "has_imdb_rating", ratings[int(rng.integers(len(ratings)))]))
        facts.append((m, "has_imdb_votes", _VOTES[int(rng.integers(len(_VOTES)))]))
    # keep every generated entity in the graph even if unused
    labels: dict[str, int] = {}
    for group in (movies, persons, years, languages, genres, tags, ratings, _VOTES):
        for label in group:
            labels.setdefault(label, len(labels))
    rel_ids = {r: i for i, r in enumerate(RELATIONS)}
    triples = [(labels[h], rel_ids[r], labels[t]) for h, r, t in facts]
    return KnowledgeGraph.build(labels, RELATIONS, triples)


def follow_path(kg: KnowledgeGraph, start: int, path: Sequence[int]) -> set[int]:
    """Entities reached from ``start`` by following ``path`` exactly."""
    frontier = {start}
    for r in path:
        frontier = {t for e in frontier for (q, t) in kg.out_index[e] if q == r}
    return frontier


def generate_synthetic_benchmark(spec: SyntheticSpec | None = None, seed: int = 0) -> SyntheticBenchmark:
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(seed)
    kg = _build_kg(spec, rng)
    if kg.n_relations < 2:
        raise ValueError("need at least 2 relation types")
    full = augment_reverse(kg)
    templates = [t for t in spec.templates if t.hops in spec.hops]
    if not templates:
        raise ValueError(f"no templates with hop counts {spec.hops}")
    groundings = []
    for tmpl in templates:
        try:
            path = [full.relation_id(r) for r in tmpl.path]
        except KeyError as exc:
            raise ValueError(f"template {tmpl.name} uses unknown relation {exc}") from None
        found = 0
        for topic in range(full.n_entities):
            answers = follow_path(full, topic, path) - {topic}
            if answers:
                groundings.append((tmpl, topic, sorted(answers)))
                found += 1
        if not found:
            raise ValueError(f"template {tmpl.name} has no valid grounding in the generated graph")
    order = rng.permutation(len(groundings))
    want = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    splits: dict[str, list[QAExample]] = {"train": [], "dev": [], "test": []}
    template_of: dict[str, str] = {}
    # Whole groundings are dealt to one split, so no (template, topic) pair crosses splits.
    cursor = 0
    for name in ("test", "dev", "train"):
        while len(splits[name]) < want[name] and cursor < len(order):
            tmpl, topic, answers = groundings[order[cursor]]
            cursor += 1
            for phrase in tmpl.phrasings:
                q = phrase.format(kg.entities[topic])
                splits[name].append(QAExample(q, kg.entities[topic], tuple(kg.entities[a] for a in answers)))
                template_of[q] = tmpl.name
    for name in splits:
        perm = rng.permutation(len(splits[name]))
        splits[name] = [splits[name][i] for i in perm][: want[name]]
    return SyntheticBenchmark(kg, splits["train"], splits["dev"], splits["test"], template_of)
