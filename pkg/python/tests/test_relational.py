"""Tests for relations, the query language and the join graph."""

import numpy as np
import pytest
from thetamr.exceptions import (
    ConnectivityError,
    EmptyRelationError,
    QueryError,
    RowError,
    SchemaError,
)
from thetamr.relational import (
    build_join_graph,
    join_combinations,
    load_relation,
    parse_datetime,
    parse_query,
    render_query,
    write_relation,
)
from thetamr.types import OPERATORS

from tests.conftest import build_query, condition, integer_relation


class TestLoadRelation:
    """Test relation file loading."""

    def test_load_integer_relation(self, tmp_path):
        """Test a three-tuple file is read column-wise."""
        path = tmp_path / "r.csv"
        path.write_text("id:integer,bt:integer\n1,10\n2,20\n3,30\n")

        relation = load_relation(path)

        assert relation.name == "r"
        assert relation.cardinality == 3
        assert relation.schema.names == ["id", "bt"]
        assert relation.column("bt").tolist() == [10, 20, 30]
        assert relation.bytes_total == len("1,10\n2,20\n3,30\n")

    def test_load_mixed_types(self, tmp_path):
        """Test decimal, string and date-time attributes."""
        path = tmp_path / "mixed.csv"
        path.write_text(
            "price:decimal,city:string,at:date-time\n"
            "9.5,Oslo,2008-10-01T08:30:00\n"
            "12.25,Rome,1222849800\n"
        )

        relation = load_relation(path, name="M")

        assert relation.name == "M"
        assert relation.column("price").dtype == np.float64
        assert relation.row(0) == (9.5, "Oslo", 1222849800)
        assert relation.row(1)[2] == 1222849800

    def test_header_only_file(self, tmp_path):
        """Test a header without tuples is rejected."""
        path = tmp_path / "empty.csv"
        path.write_text("a:integer\n")

        with pytest.raises(EmptyRelationError):
            load_relation(path)

    def test_row_type_mismatch(self, tmp_path):
        """Test a non-integer value reports its file line."""
        path = tmp_path / "bad.csv"
        path.write_text("a:integer\nx\n")

        with pytest.raises(RowError) as info:
            load_relation(path)

        assert info.value.row == 2
        assert "row 2" in str(info.value)

    def test_wrong_field_count(self, tmp_path):
        """Test a short row is rejected."""
        path = tmp_path / "short.csv"
        path.write_text("a:integer,b:integer\n1,2\n3\n")

        with pytest.raises(RowError) as info:
            load_relation(path)

        assert info.value.row == 3

    def test_row_number_counts_blank_lines(self, tmp_path):
        """Test blank lines before a bad row still count toward its line."""
        path = tmp_path / "gaps.csv"
        path.write_text("a:integer\n1\n\n\n2\nx\n")

        with pytest.raises(RowError) as info:
            load_relation(path)

        assert info.value.row == 6

    def test_blank_lines_skipped(self, tmp_path):
        """Test blank lines hold no tuples."""
        path = tmp_path / "gaps.csv"
        path.write_text("a:integer\n1\n\n2\n")

        assert load_relation(path).column("a").tolist() == [1, 2]

    def test_malformed_header(self, tmp_path):
        """Test a header field without a type."""
        path = tmp_path / "header.csv"
        path.write_text("a-integer\n1\n")

        with pytest.raises(SchemaError):
            load_relation(path)

    def test_unknown_type(self, tmp_path):
        """Test an unsupported attribute type."""
        path = tmp_path / "header.csv"
        path.write_text("a:blob\n1\n")

        with pytest.raises(SchemaError):
            load_relation(path)

    def test_duplicate_attribute(self, tmp_path):
        """Test duplicate attribute names are rejected."""
        path = tmp_path / "dup.csv"
        path.write_text("a:integer,a:integer\n1,2\n")

        with pytest.raises(SchemaError):
            load_relation(path)

    def test_missing_file(self, tmp_path):
        """Test an unreadable path."""
        with pytest.raises(SchemaError):
            load_relation(tmp_path / "nope.csv")

    def test_write_and_reload(self, tmp_path, make_relation):
        """Test write_relation produces a loadable file."""
        relation = make_relation("R", a=[3, 1, 2], b=[-1, 0, 7])
        path = tmp_path / "R.csv"

        write_relation(relation, path)
        loaded = load_relation(path)

        assert list(loaded.rows()) == list(relation.rows())
        assert loaded.schema == relation.schema


class TestValues:
    """Test value normalisation."""

    def test_parse_datetime_iso(self):
        """Test ISO timestamps become epoch seconds in UTC."""
        assert parse_datetime("2008-10-01T08:30:00") == 1222849800
        assert parse_datetime("2008-10-01T08:30:00Z") == 1222849800

    def test_parse_datetime_integer(self):
        """Test bare integers pass through."""
        assert parse_datetime("42") == 42


class TestParseQuery:
    """Test the query language."""

    def test_itinerary_query(self, itinerary_dir):
        """Test relations, offsets and the projection are parsed."""
        text = (itinerary_dir / "itinerary.q").read_text()

        query = parse_query(text, base_dir=itinerary_dir)

        assert query.names == ["F1", "F2", "F3"]
        assert len(query.conditions) == 2
        first = query.conditions[0]
        assert first.id == 1
        assert first.left.offset == 30
        assert first.op == "<"
        assert first.relations == ("F1", "F2")
        assert [str(ref) for ref in query.projection] == ["F1.fno", "F2.fno", "F3.fno"]

    def test_search_path(self, itinerary_dir, tmp_path_factory):
        """Test relation files are found on the search path."""
        text = (itinerary_dir / "itinerary.q").read_text()
        elsewhere = tmp_path_factory.mktemp("elsewhere")

        query = parse_query(text, base_dir=elsewhere, search_path=[itinerary_dir])

        assert query.relation("F2").cardinality == 4

    def test_negative_offset(self, make_relation):
        """Test `- n` offsets."""
        catalog = {"R": make_relation("R", a=[1]), "S": make_relation("S", b=[2])}
        text = 'RELATION R FROM "r";\nRELATION S FROM "s";\nJOIN R.a - 3 >= S.b;\n'

        query = parse_query(text, catalog=catalog)

        assert query.conditions[0].left.offset == -3
        assert query.conditions[0].op == ">="

    @pytest.mark.parametrize("op", OPERATORS)
    def test_every_operator(self, op, make_relation):
        """Test all six comparison operators are accepted."""
        catalog = {"R": make_relation("R", a=[1]), "S": make_relation("S", b=[2])}
        text = f'RELATION R FROM "r";\nRELATION S FROM "s";\nJOIN R.a {op} S.b;\n'

        query = parse_query(text, catalog=catalog)

        assert query.conditions[0].op == op

    def test_default_projection(self, make_relation):
        """Test a missing SELECT projects every attribute."""
        catalog = {
            "R": make_relation("R", a=[1], c=[2]),
            "S": make_relation("S", b=[2]),
        }
        text = 'RELATION R FROM "r";\nRELATION S FROM "s";\nJOIN R.a < S.b;\n'

        query = parse_query(text, catalog=catalog)

        assert [str(ref) for ref in query.projection] == ["R.a", "R.c", "S.b"]

    def test_comments_and_blank_lines(self, make_relation):
        """Test comment lines are skipped."""
        catalog = {"R": make_relation("R", a=[1]), "S": make_relation("S", b=[2])}
        text = (
            "# header comment\n\n"
            'RELATION R FROM "r";\n'
            "-- another comment\n"
            'RELATION S FROM "s";\n'
            "JOIN R.a = S.b;\n"
        )

        query = parse_query(text, catalog=catalog)

        assert len(query.conditions) == 1

    def test_unsupported_operator(self, make_relation):
        """Test `!=` is rejected with a line number."""
        catalog = {"R": make_relation("R", a=[1]), "S": make_relation("S", b=[2])}
        text = 'RELATION R FROM "r";\nRELATION S FROM "s";\nJOIN R.a != S.b;\n'

        with pytest.raises(QueryError) as info:
            parse_query(text, catalog=catalog)

        assert info.value.line == 3

    def test_unknown_relation(self, make_relation):
        """Test a condition on an undeclared relation."""
        catalog = {"R": make_relation("R", a=[1]), "S": make_relation("S", b=[2])}
        text = 'RELATION R FROM "r";\nRELATION S FROM "s";\nJOIN R.a < T.b;\n'

        with pytest.raises(QueryError):
            parse_query(text, catalog=catalog)

    def test_unknown_attribute(self, make_relation):
        """Test a condition on a missing attribute."""
        catalog = {"R": make_relation("R", a=[1]), "S": make_relation("S", b=[2])}
        text = 'RELATION R FROM "r";\nRELATION S FROM "s";\nJOIN R.zz < S.b;\n'

        with pytest.raises(QueryError):
            parse_query(text, catalog=catalog)

    def test_missing_relation_file(self, tmp_path):
        """Test an unresolvable relation path."""
        with pytest.raises(QueryError):
            parse_query('RELATION R FROM "missing.csv";\n', base_dir=tmp_path)

    def test_no_conditions(self, make_relation):
        """Test a query needs at least one condition."""
        catalog = {"R": make_relation("R", a=[1])}

        with pytest.raises(QueryError):
            parse_query('RELATION R FROM "r";\n', catalog=catalog)

    def test_self_comparison(self, make_relation):
        """Test a condition must join two distinct relations."""
        catalog = {
            "R": make_relation("R", a=[1], b=[2]),
            "S": make_relation("S", b=[2]),
        }
        text = (
            'RELATION R FROM "r";\nRELATION S FROM "s";\n'
            "JOIN R.a < R.b;\nJOIN R.a < S.b;\n"
        )

        with pytest.raises(QueryError):
            parse_query(text, catalog=catalog)

    def test_disconnected_graph(self, make_relation):
        """Test a disconnected join graph is rejected."""
        catalog = {
            name: make_relation(name, a=[1]) for name in ("R1", "R2", "R3", "R4")
        }
        text = "".join(f'RELATION {n} FROM "{n}";\n' for n in catalog) + (
            "JOIN R1.a < R2.a;\nJOIN R3.a < R4.a;\n"
        )

        with pytest.raises(ConnectivityError):
            parse_query(text, catalog=catalog)

    def test_render_round_trip(self, make_relation):
        """Test render_query output parses back to the same query."""
        catalog = {
            "R": make_relation("R", a=[1], c=[2]),
            "S": make_relation("S", b=[2]),
        }
        text = (
            'RELATION R FROM "r.csv";\nRELATION S FROM "s.csv";\n'
            "JOIN R.a + 4 <> S.b;\nJOIN R.c <= S.b - 1;\nSELECT S.b, R.a;\n"
        )
        query = parse_query(text, catalog=catalog)

        again = parse_query(render_query(query), catalog=catalog)

        assert again.conditions == query.conditions
        assert again.projection == query.projection
        assert again.sources == query.sources


class TestJoinGraph:
    """Test join graph construction."""

    def test_cycle(self, cycle_query):
        """Test the six-cycle has six labelled edges."""
        g = build_join_graph(cycle_query)

        assert len(g.vertices) == 6
        assert g.labels == [1, 2, 3, 4, 5, 6]
        assert g.is_connected()
        assert [k for _, k in g.incident("R1")] == [1, 6]

    def test_parallel_edges(self):
        """Test two conditions between the same pair give two edges."""
        query = build_query(
            [integer_relation("R", a=[1], b=[2]), integer_relation("S", c=[3])],
            [condition(1, "R.a", "<", "S.c"), condition(2, "R.b", ">", "S.c")],
        )

        g = build_join_graph(query)

        assert len(g.edges) == 2
        assert g.conditions_among(["R", "S"]) == [1, 2]

    def test_triangle(self):
        """Test a triangle keeps all three conditions."""
        relations = [integer_relation(n, a=[1]) for n in ("A", "B", "C")]
        query = build_query(
            relations,
            [
                condition(1, "A.a", "<", "B.a"),
                condition(2, "B.a", "<", "C.a"),
                condition(3, "C.a", "<", "A.a"),
            ],
        )

        g = build_join_graph(query)

        assert g.conditions_among(["A", "B"]) == [1]
        assert g.conditions_among(["A", "B", "C"]) == [1, 2, 3]


class TestJoinCombinations:
    """Test nested evaluation of conditions."""

    def test_two_way(self, two_way_query):
        """Test R1.a < R2.b over {1, 2} x {1, 2} keeps (1, 2) only."""
        columns = {r.name: r.columns for r in two_way_query.relations}

        matches, checked = join_combinations(
            ["R1", "R2"], columns, two_way_query.conditions
        )

        assert matches.tolist() == [[0, 1]]
        assert checked == 4

    def test_offset_applied(self):
        """Test offsets shift the left operand."""
        columns = {"R": {"a": np.array([1, 5])}, "S": {"b": np.array([4])}}

        matches, _ = join_combinations(
            ["R", "S"], columns, [condition(1, "R.a", ">=", "S.b", offset=3)]
        )

        assert matches.tolist() == [[0, 0], [1, 0]]

    def test_empty_input(self):
        """Test an empty relation yields no combinations."""
        columns = {"R": {"a": np.array([], dtype=np.int64)}, "S": {"b": np.array([4])}}

        matches, _ = join_combinations(
            ["R", "S"], columns, [condition(1, "R.a", "<", "S.b")]
        )

        assert matches.shape == (0, 2)
