import json

import pytest

from guigen.errors import IngestError
from guigen.repository import (
    ComponentNode,
    FilterRules,
    component_type_count,
    filter_pipeline,
    ingest_captions,
    ingest_screens,
    load_repository,
    save_repository,
)

from conftest import make_repo, make_screen, screen_record, write_screen_records
from guigen.repository import Repository


class TestIngestScreens:
    def test_three_valid_records(self, tmp_path):
        path = write_screen_records(tmp_path / "screens.jsonl",
                                    [screen_record(f"s{i}") for i in range(3)])
        repo, report = ingest_screens(path)
        assert len(repo) == 3
        assert report.ingested == 3
        assert report.skipped == 0

    def test_empty_source(self, tmp_path):
        path = tmp_path / "screens.jsonl"
        path.write_text("", encoding="utf-8")
        repo, report = ingest_screens(path)
        assert len(repo) == 0

    def test_malformed_record_skipped_with_warning_count(self, tmp_path):
        records = [screen_record(f"s{i}") for i in range(3)]
        lines = [json.dumps(r) for r in records] + ["{not json"]
        path = tmp_path / "screens.jsonl"
        path.write_text("\n".join(lines), encoding="utf-8")
        repo, report = ingest_screens(path)
        assert len(repo) == 3
        assert report.skipped == 1

    def test_invalid_bounds_is_malformed(self, tmp_path):
        bad = screen_record("bad")
        bad["hierarchy"]["bounds"] = [10, 0, 5, 20]  # left > right
        path = write_screen_records(tmp_path / "screens.jsonl",
                                    [screen_record("ok"), bad])
        repo, report = ingest_screens(path)
        assert repo.ids() == ["ok"]
        assert report.skipped == 1

    def test_unreadable_source_fatal(self, tmp_path):
        with pytest.raises(IngestError):
            ingest_screens(tmp_path / "missing.jsonl")

    def test_directory_source_uses_screens_jsonl(self, tmp_path):
        write_screen_records(tmp_path / "screens.jsonl", [screen_record("s0")])
        repo, _ = ingest_screens(tmp_path)
        assert repo.ids() == ["s0"]


class TestIngestCaptions:
    def _repo(self, tmp_path):
        path = write_screen_records(tmp_path / "screens.jsonl",
                                    [screen_record("A"), screen_record("B")])
        return ingest_screens(path)[0]

    def _captions(self, tmp_path, records):
        path = tmp_path / "captions.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records), encoding="utf-8")
        return path

    def test_captions_attach_to_matching_screens(self, tmp_path):
        repo = self._repo(tmp_path)
        path = self._captions(tmp_path, [
            {"screen_id": "A", "caption": "first"},
            {"screen_id": "A", "caption": "second"},
            {"screen_id": "B", "caption": "only"},
        ])
        repo, report = ingest_captions(path, repo)
        assert repo.get("A").captions == ("first", "second")
        assert repo.get("B").captions == ("only",)
        assert report.ingested == 3

    def test_unknown_screen_id_dropped_and_counted(self, tmp_path):
        repo = self._repo(tmp_path)
        path = self._captions(tmp_path, [{"screen_id": "nope", "caption": "x"}])
        repo, report = ingest_captions(path, repo)
        assert report.dropped_captions == 1
        assert all(not s.captions for s in repo)

    def test_duplicate_caption_kept_twice(self, tmp_path):
        repo = self._repo(tmp_path)
        path = self._captions(tmp_path, [
            {"screen_id": "A", "caption": "same"},
            {"screen_id": "A", "caption": "same"},
        ])
        repo, _ = ingest_captions(path, repo)
        assert repo.get("A").captions == ("same", "same")

    def test_unreadable_captions_fatal(self, tmp_path):
        repo = self._repo(tmp_path)
        with pytest.raises(IngestError):
            ingest_captions(tmp_path / "missing.jsonl", repo)


class TestComponentTypeCount:
    def test_duplicate_labels_counted_once(self, tmp_path):
        screen = make_screen(tmp_path, "s", ["c"],
                             types=["Button", "Button", "Text"])
        assert component_type_count(screen) == 2

    def test_single_node(self, tmp_path):
        screen = make_screen(tmp_path, "s", ["c"], types=["Root"])
        assert component_type_count(screen) == 1

    def test_nine_nodes_seven_distinct(self, tmp_path):
        # brute-force oracle: count the distinct labels of the 9-node tree
        labels = ["Root", "Text", "Image", "Button", "List", "Icon",
                  "Toolbar", "Text", "Image"]
        screen = make_screen(tmp_path, "s", ["c"], types=labels)
        assert component_type_count(screen) == len(set(labels)) == 7

    def test_count_bounded_by_node_count(self, tmp_path):
        for types in (["A"], ["A", "A"], ["A", "B", "C"], ["X"] * 6):
            screen = make_screen(tmp_path, "s", ["c"], types=types)
            nodes = sum(1 for _ in screen.hierarchy.walk())
            assert component_type_count(screen) <= nodes


class TestComponentNode:
    def test_negative_bounds_rejected(self):
        with pytest.raises(ValueError):
            ComponentNode(component_type="X", bounds=(-1, 0, 10, 10))

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ValueError):
            ComponentNode(component_type="X", bounds=(0, 10, 10, 5))


class TestFilterPipeline:
    def test_min_types_excludes_screen_below_threshold(self, tmp_path):
        six = make_screen(tmp_path, "six", ["c"],
                          types=["A", "B", "C", "D", "E", "F"])
        seven = make_screen(tmp_path, "seven", ["c"],
                            types=["A", "B", "C", "D", "E", "F", "G"])
        repo = Repository(screens=(six, seven))
        filtered, report = filter_pipeline(repo, FilterRules(min_component_types=7))
        assert filtered.ids() == ["seven"]
        assert report.per_rule_exclusions == {"min-component-types": 1}

    def test_flagged_screen_excluded(self, tmp_path):
        flagged = make_screen(tmp_path, "f", ["c"], flags=["overlay-menu"])
        clean = make_screen(tmp_path, "ok", ["c"])
        repo = Repository(screens=(flagged, clean))
        filtered, report = filter_pipeline(
            repo, FilterRules(excluded_flags=frozenset({"overlay-menu"})))
        assert filtered.ids() == ["ok"]
        assert report.per_rule_exclusions == {"excluded-flag:overlay-menu": 1}

    def test_empty_rules_identity(self, tmp_path):
        repo = make_repo(tmp_path, 4)
        filtered, report = filter_pipeline(repo, FilterRules())
        assert filtered.ids() == repo.ids()
        assert report.retained_count == report.input_count == 4

    def test_require_caption(self, tmp_path):
        with_caption = make_screen(tmp_path, "c", ["described"])
        without = make_screen(tmp_path, "n", [])
        repo = Repository(screens=(with_caption, without))
        filtered, report = filter_pipeline(repo, FilterRules(require_caption=True))
        assert filtered.ids() == ["c"]
        assert report.per_rule_exclusions == {"require-caption": 1}

    def test_screen_violating_several_rules_counted_per_rule(self, tmp_path):
        bad = make_screen(tmp_path, "bad", [], types=["A"], flags=["overlay-menu"])
        repo = Repository(screens=(bad,))
        _, report = filter_pipeline(repo, FilterRules(
            min_component_types=7, excluded_flags=frozenset({"overlay-menu"}),
            require_caption=True))
        assert sum(report.per_rule_exclusions.values()) == 3
        assert report.retained_count == 0

    def test_idempotent(self, tmp_path):
        repo = Repository(screens=(
            make_screen(tmp_path, "a", ["x"], types=["A", "B"]),
            make_screen(tmp_path, "b", [], types=["A"]),
            make_screen(tmp_path, "c", ["y"], flags=["overlay-menu"]),
        ))
        rules = FilterRules(min_component_types=2, require_caption=True,
                            excluded_flags=frozenset({"overlay-menu"}))
        once, _ = filter_pipeline(repo, rules)
        twice, _ = filter_pipeline(once, rules)
        assert once.ids() == twice.ids()

    def test_output_is_subset_of_input(self, tmp_path):
        repo = make_repo(tmp_path, 6)
        filtered, _ = filter_pipeline(repo, FilterRules(min_component_types=3))
        assert set(filtered.ids()) <= set(repo.ids())


class TestArchive:
    def test_round_trip(self, tmp_path):
        repo = make_repo(tmp_path, 3, captions_per_screen=2)
        path = tmp_path / "repo.jsonl"
        save_repository(repo, path)
        loaded = load_repository(path)
        assert loaded.ids() == repo.ids()
        assert [s.captions for s in loaded] == [s.captions for s in repo]
        assert [s.hierarchy for s in loaded] == [s.hierarchy for s in repo]

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "bogus.jsonl"
        path.write_text('{"format": "other"}\n', encoding="utf-8")
        with pytest.raises(IngestError):
            load_repository(path)
