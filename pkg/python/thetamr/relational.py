"""Relations, the query language and join-graph construction."""

import logging
import operator
import re
from datetime import datetime, timezone
from pathlib import Path
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from thetamr.exceptions import (
    ConnectivityError,
    EmptyRelationError,
    QueryError,
    RowError,
    SchemaError,
)
from thetamr.types import (
    OPERATORS,
    Attribute,
    AttributeRef,
    AttributeType,
    Operand,
    Schema,
    ThetaCondition,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

OPERATOR_FUNCS: Dict[str, Callable[[Any, Any], Any]] = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
    "<>": operator.ne,
}

_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_DTYPES: Dict[str, Any] = {
    "integer": np.int64,
    "decimal": np.float64,
    "date-time": np.int64,
}
NUMERIC_TYPES = frozenset({"integer", "decimal", "date-time"})


def parse_datetime(text: str) -> int:
    """Normalize an ISO-8601 timestamp or bare integer to epoch seconds."""
    text = text.strip()
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    value = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return int(value.timestamp())


def coerce_value(kind: AttributeType, value: Any) -> Any:
    """Convert a raw field to the scalar type of an attribute."""
    if kind == "string":
        if not isinstance(value, str):
            raise ValueError(f"expected string, got {value!r}")
        if "," in value or "\n" in value:
            raise ValueError(f"string {value!r} contains a separator")
        return value
    if isinstance(value, bool):
        raise ValueError(f"expected {kind}, got {value!r}")
    if kind == "integer":
        if isinstance(value, (int, np.integer)):
            return int(value)
        if isinstance(value, str) and re.fullmatch(r"\s*[+-]?\d+\s*", value):
            return int(value)
        raise ValueError(f"expected integer, got {value!r}")
    if kind == "decimal":
        if isinstance(value, (int, float, np.integer, np.floating)):
            return float(value)
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"expected decimal, got {value!r}")
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        return int(value.timestamp())
    try:
        return parse_datetime(str(value))
    except ValueError:
        raise ValueError(f"expected date-time, got {value!r}")


def render_value(kind: AttributeType, value: Any) -> str:
    if kind == "decimal":
        return repr(float(value))
    return str(value)


class Relation:
    """A named, schema-typed tuple set stored column-wise."""

    def __init__(
        self,
        name: str,
        schema: Schema,
        columns: Mapping[str, np.ndarray],
        path: Optional[str] = None,
        bytes_total: Optional[int] = None,
    ):
        self.name = name
        self.schema = schema
        self.path = path
        self._columns: Dict[str, np.ndarray] = {}
        sizes = set()
        for attribute in schema.attributes:
            if attribute.name not in columns:
                raise SchemaError(
                    f"Relation '{name}' has no column '{attribute.name}'", path
                )
            column = np.asarray(columns[attribute.name])
            column.setflags(write=False)
            self._columns[attribute.name] = column
            sizes.add(len(column))
        if len(sizes) > 1:
            raise SchemaError(f"Relation '{name}' has columns of unequal length", path)
        self.cardinality = sizes.pop()
        self.bytes_total = (
            bytes_total if bytes_total is not None else self._rendered_bytes()
        )

    @classmethod
    def from_rows(
        cls,
        name: str,
        schema: Schema,
        rows: Iterable[Sequence[Any]],
        path: Optional[str] = None,
        bytes_total: Optional[int] = None,
        numbers: Optional[Sequence[int]] = None,
    ) -> "Relation":
        """
        Build a relation from row tuples, type-checking every value.

        `numbers` labels each row in RowError (file line numbers when loading);
        rows count from 1 without it.
        """
        attributes = schema.attributes
        values: List[List[Any]] = [[] for _ in attributes]
        rows = list(rows)
        labels = numbers if numbers is not None else range(1, len(rows) + 1)
        for number, row in zip(labels, rows):
            if len(row) != len(attributes):
                raise RowError(
                    f"expected {len(attributes)} values, got {len(row)}", number, path
                )
            for slot, attribute, raw in zip(values, attributes, row):
                try:
                    slot.append(coerce_value(attribute.type, raw))
                except ValueError as e:
                    raise RowError(f"attribute '{attribute.name}': {e}", number, path)
        columns = {
            attribute.name: _column(attribute.type, slot)
            for attribute, slot in zip(attributes, values)
        }
        return cls(name, schema, columns, path=path, bytes_total=bytes_total)

    def __len__(self) -> int:
        return self.cardinality

    def __repr__(self) -> str:
        return f"Relation({self.name!r}, cardinality={self.cardinality})"

    @property
    def columns(self) -> Dict[str, np.ndarray]:
        return dict(self._columns)

    def column(self, name: str) -> np.ndarray:
        return self._columns[name]

    def row(self, position: int) -> Tuple[Any, ...]:
        return tuple(
            self._columns[a.name][position].item() for a in self.schema.attributes
        )

    def rows(self) -> Iterator[Tuple[Any, ...]]:
        for position in range(self.cardinality):
            yield self.row(position)

    def take(self, positions: np.ndarray) -> Dict[str, np.ndarray]:
        """Columns restricted to the given row positions."""
        return {name: column[positions] for name, column in self._columns.items()}

    @property
    def avg_row_bytes(self) -> float:
        if self.cardinality == 0:
            return float(len(self.schema.attributes))
        return self.bytes_total / self.cardinality

    def field_widths(
        self, positions: Optional[np.ndarray] = None
    ) -> Dict[str, np.ndarray]:
        """Encoded width of each value, separator included."""
        widths = {}
        for attribute in self.schema.attributes:
            column = self._columns[attribute.name]
            if positions is not None:
                column = column[positions]
            if attribute.type == "decimal":
                rendered = np.array([repr(float(v)) for v in column], dtype=str)
            else:
                rendered = column.astype(str)
            widths[attribute.name] = np.char.str_len(rendered) + 1
        return widths

    def _rendered_bytes(self) -> int:
        if self.cardinality == 0:
            return 0
        return int(sum(w.sum() for w in self.field_widths().values()))


def _column(kind: AttributeType, values: List[Any]) -> np.ndarray:
    if kind == "string":
        return np.array(values, dtype=str)
    return np.array(values, dtype=_DTYPES[kind])


def parse_schema_header(header: str, path: Optional[str] = None) -> Schema:
    attributes = []
    for field in header.strip().split(","):
        name, sep, kind = field.strip().partition(":")
        name, kind = name.strip(), kind.strip()
        if not sep or not _IDENTIFIER.match(name):
            raise SchemaError(f"Malformed schema field '{field}'", path)
        if kind not in ("integer", "decimal", "string", "date-time"):
            raise SchemaError(f"Unknown attribute type '{kind}' for '{name}'", path)
        attributes.append(Attribute(name=name, type=kind))  # type: ignore[arg-type]
    try:
        return Schema(attributes=attributes)
    except ValidationError as e:
        raise SchemaError(f"Invalid schema header: {e.errors()[0]['msg']}", path)


def load_relation(path: PathLike, name: Optional[str] = None) -> Relation:
    """
    Load a relation file.

    Args:
        path: File with a `name:type,...` header and one tuple per line
        name: Relation name (defaults to the file stem)

    Returns:
        The parsed relation

    Raises:
        SchemaError: If the header is missing or malformed
        RowError: If a data row does not match the schema; `row` is its file line
        EmptyRelationError: If the file holds no tuples
    """
    path = Path(path)
    name = name or path.stem
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"Cannot read relation file {path}: {e}", str(path))
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise SchemaError(f"Relation file {path} has no schema header", str(path))
    schema = parse_schema_header(lines[0], str(path))

    numbered = [(n, line) for n, line in enumerate(lines[1:], start=2) if line.strip()]
    data = [line for _, line in numbered]
    if not data:
        raise EmptyRelationError(name, str(path))
    bytes_total = sum(len(line.encode("utf-8")) + 1 for line in data)
    relation = Relation.from_rows(
        name,
        schema,
        (line.split(",") for line in data),
        path=str(path),
        bytes_total=bytes_total,
        numbers=[n for n, _ in numbered],
    )
    logger.info(
        "Loaded relation %s: %d tuples, %d bytes from %s",
        name,
        relation.cardinality,
        bytes_total,
        path,
    )
    return relation


def write_relation(relation: Relation, path: PathLike) -> None:
    """Write a relation in the file format read by load_relation."""
    kinds = [a.type for a in relation.schema.attributes]
    lines = [relation.schema.header()]
    for row in relation.rows():
        lines.append(",".join(render_value(k, v) for k, v in zip(kinds, row)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class Query(BaseModel):
    """A multi-way theta-join query over loaded relations."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    relations: List[Relation] = Field(description="Relations in declaration order")
    conditions: List[ThetaCondition] = Field(description="Conditions numbered 1..n")
    projection: List[AttributeRef] = Field(description="Attributes of the result")
    sources: Dict[str, str] = Field(
        default_factory=dict, description="Relation name -> path as written"
    )

    @model_validator(mode="after")
    def _validate(self) -> "Query":
        by_name: Dict[str, Relation] = {}
        for relation in self.relations:
            if relation.name in by_name:
                raise QueryError(f"Relation '{relation.name}' declared twice")
            by_name[relation.name] = relation
        if not self.conditions:
            raise QueryError("A query needs at least one JOIN condition")
        for condition in self.conditions:
            kinds = [
                _attribute_type(by_name, side.ref, condition.id)
                for side in (condition.left, condition.right)
            ]
            if ("string" in kinds) and kinds[0] != kinds[1]:
                raise QueryError(
                    f"Condition {condition.id} compares a string with a number"
                )
            if "string" in kinds and (condition.left.offset or condition.right.offset):
                raise QueryError(
                    f"Condition {condition.id} adds an offset to a string attribute"
                )
        for ref in self.projection:
            _attribute_type(by_name, ref, None)

        graph = nx.Graph()
        graph.add_nodes_from(by_name)
        graph.add_edges_from(c.relations for c in self.conditions)
        if not nx.is_connected(graph):
            parts = sorted(sorted(part) for part in nx.connected_components(graph))
            raise ConnectivityError(
                "Join graph is disconnected: "
                + " | ".join(",".join(part) for part in parts)
            )
        return self

    @property
    def names(self) -> List[str]:
        return [r.name for r in self.relations]

    def relation(self, name: str) -> Relation:
        for relation in self.relations:
            if relation.name == name:
                return relation
        raise KeyError(name)

    def condition(self, condition_id: int) -> ThetaCondition:
        return self.conditions[condition_id - 1]

    @property
    def catalog(self) -> Dict[str, Relation]:
        return {r.name: r for r in self.relations}


def _attribute_type(
    by_name: Mapping[str, Relation], ref: AttributeRef, condition_id: Optional[int]
) -> str:
    where = f" in condition {condition_id}" if condition_id else ""
    relation = by_name.get(ref.relation)
    if relation is None:
        raise QueryError(f"Unknown relation '{ref.relation}'{where}")
    try:
        return relation.schema.type_of(ref.attribute)
    except KeyError:
        raise QueryError(f"Unknown attribute '{ref}'{where}")


_RELATION_STMT = re.compile(r'^RELATION\s+(\w+)\s+FROM\s+"([^"]*)"\s*;$', re.I)
_OPERAND = r"(\w+)\.(\w+)(?:\s*([+-])\s*(\d+))?"
_JOIN_STMT = re.compile(
    r"^JOIN\s+" + _OPERAND + r"\s*([<>=!]+)\s*" + _OPERAND + r"\s*;$", re.I
)
_SELECT_STMT = re.compile(r"^SELECT\s+(.+?)\s*;$", re.I)
_REF = re.compile(r"^(\w+)\.(\w+)$")


def _operand(groups: Sequence[Optional[str]]) -> Operand:
    relation, attribute, sign, amount = groups
    offset = int(amount) if amount else 0
    if sign == "-":
        offset = -offset
    ref = AttributeRef(relation=relation, attribute=attribute)
    return Operand(ref=ref, offset=offset)


def _resolve(
    path: str, base_dir: Optional[Path], search_path: Sequence[PathLike]
) -> Path:
    candidate = Path(path)
    if candidate.is_absolute():
        return candidate
    roots = [Path(p) for p in search_path]
    if base_dir is not None:
        roots.insert(0, base_dir)
    for root in roots:
        if (root / candidate).exists():
            return root / candidate
    if candidate.exists():
        return candidate
    raise QueryError(f"Relation file '{path}' not found")


def parse_query(
    text: str,
    base_dir: Optional[PathLike] = None,
    search_path: Sequence[PathLike] = (),
    catalog: Optional[Mapping[str, Relation]] = None,
) -> Query:
    """
    Parse query source into a Query.

    Args:
        text: Query text in the line-oriented RELATION/JOIN/SELECT grammar
        base_dir: Directory relation paths are resolved against first
        search_path: Further directories searched for relation files
        catalog: In-memory relations used instead of files for their names

    Returns:
        Query with conditions numbered 1..n in source order

    Raises:
        QueryError: On grammar errors, unknown names or unsupported operators
        ConnectivityError: If the join graph is disconnected
    """
    base = Path(base_dir) if base_dir is not None else None
    catalog = catalog or {}
    relations: List[Relation] = []
    sources: Dict[str, str] = {}
    conditions: List[ThetaCondition] = []
    projection: Optional[List[AttributeRef]] = None

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("--"):
            continue
        match = _RELATION_STMT.match(line)
        if match:
            name, path = match.groups()
            if name in sources:
                raise QueryError(f"Relation '{name}' declared twice", number)
            sources[name] = path
            if name in catalog:
                relations.append(catalog[name])
            else:
                relations.append(load_relation(_resolve(path, base, search_path), name))
            continue
        match = _JOIN_STMT.match(line)
        if match:
            groups = match.groups()
            op = groups[4]
            if op not in OPERATORS:
                raise QueryError(f"Unsupported operator '{op}'", number)
            for relation in (groups[0], groups[5]):
                if relation not in sources:
                    raise QueryError(f"Unknown relation '{relation}'", number)
            try:
                condition = ThetaCondition(
                    id=len(conditions) + 1,
                    left=_operand(groups[0:4]),
                    op=op,
                    right=_operand(groups[5:9]),
                )
            except ValidationError as e:
                raise QueryError(e.errors()[0]["msg"], number)
            conditions.append(condition)
            continue
        match = _SELECT_STMT.match(line)
        if match:
            if projection is not None:
                raise QueryError("Only one SELECT statement is allowed", number)
            projection = []
            for item in match.group(1).split(","):
                ref = _REF.match(item.strip())
                if not ref:
                    raise QueryError(
                        f"Malformed attribute reference '{item.strip()}'", number
                    )
                projection.append(
                    AttributeRef(relation=ref.group(1), attribute=ref.group(2))
                )
            continue
        if re.match(r"^JOIN\b", line, re.I):
            raise QueryError(f"Malformed or unsupported condition '{line}'", number)
        raise QueryError(f"Unrecognised statement '{line}'", number)

    if projection is None:
        projection = [
            AttributeRef(relation=r.name, attribute=a)
            for r in relations
            for a in r.schema.names
        ]
    return Query(
        relations=relations,
        conditions=conditions,
        projection=projection,
        sources=sources,
    )


def render_query(query: Query) -> str:
    """Render a Query back into query source."""
    lines = []
    for relation in query.relations:
        path = query.sources.get(relation.name) or relation.path or f"{relation.name}.csv"
        lines.append(f'RELATION {relation.name} FROM "{path}";')
    for condition in query.conditions:
        lines.append(f"JOIN {condition.render()};")
    lines.append("SELECT " + ", ".join(str(ref) for ref in query.projection) + ";")
    return "\n".join(lines) + "\n"


class JoinGraph:
    """Relations as vertices, one labelled edge per theta condition."""

    def __init__(self, query: Query):
        self.query = query
        self.graph = nx.MultiGraph()
        self.graph.add_nodes_from(query.names)
        for condition in query.conditions:
            left, right = condition.relations
            self.graph.add_edge(left, right, key=condition.id, condition=condition)

    @property
    def vertices(self) -> List[str]:
        return list(self.graph.nodes)

    @property
    def edges(self) -> List[Tuple[str, str, int]]:
        return [(u, v, k) for u, v, k in self.graph.edges(keys=True)]

    @property
    def labels(self) -> List[int]:
        return sorted(k for _, _, k in self.graph.edges(keys=True))

    def condition(self, condition_id: int) -> ThetaCondition:
        return self.query.condition(condition_id)

    def incident(self, vertex: str) -> List[Tuple[str, int]]:
        """(neighbour, condition id) pairs of a vertex, sorted by id."""
        return sorted(
            ((v, k) for _, v, k in self.graph.edges(vertex, keys=True)),
            key=lambda pair: pair[1],
        )

    def conditions_among(self, relations: Iterable[str]) -> List[int]:
        """Ids of every condition whose two relations are in the given set."""
        members = set(relations)
        return sorted(
            k
            for u, v, k in self.graph.edges(keys=True)
            if u in members and v in members
        )

    def is_connected(self) -> bool:
        return nx.is_connected(self.graph)


def build_join_graph(query: Query) -> JoinGraph:
    return JoinGraph(query)


def _side_values(
    side: Operand, columns: Mapping[str, np.ndarray], rows: np.ndarray
) -> np.ndarray:
    values = columns[side.ref.attribute][rows]
    if side.offset:
        values = values + side.offset
    return values


def evaluate_condition(
    condition: ThetaCondition,
    left: Mapping[str, np.ndarray],
    left_rows: np.ndarray,
    right: Mapping[str, np.ndarray],
    right_rows: np.ndarray,
) -> np.ndarray:
    """Boolean mask of `condition` over aligned left/right row index arrays."""
    return OPERATOR_FUNCS[condition.op](
        _side_values(condition.left, left, left_rows),
        _side_values(condition.right, right, right_rows),
    )


def join_combinations(
    order: Sequence[str],
    columns: Mapping[str, Mapping[str, np.ndarray]],
    conditions: Sequence[ThetaCondition],
    chunk: int = 1 << 20,
) -> Tuple[np.ndarray, int]:
    """
    Enumerate qualifying combinations of local row positions.

    The cross product is extended one relation at a time in `order`; each
    condition is applied as soon as both of its relations are bound.

    Returns:
        (matrix of shape (k, len(order)) of row positions, candidates checked)
    """
    sizes = [len(next(iter(columns[name].values()))) for name in order]
    position = {name: i for i, name in enumerate(order)}
    pending: Dict[int, List[ThetaCondition]] = {}
    for condition in conditions:
        step = max(position[r] for r in condition.relations)
        pending.setdefault(step, []).append(condition)

    combos = np.arange(sizes[0], dtype=np.int64)[:, None]
    checked = 0
    for step in range(1, len(order)):
        width = sizes[step]
        if len(combos) == 0 or width == 0:
            return np.empty((0, len(order)), dtype=np.int64), checked
        rows_per_chunk = max(1, chunk // width)
        pieces = []
        for begin in range(0, len(combos), rows_per_chunk):
            part = combos[begin : begin + rows_per_chunk]
            extended = np.hstack(
                [
                    np.repeat(part, width, axis=0),
                    np.tile(np.arange(width, dtype=np.int64), len(part))[:, None],
                ]
            )
            checked += len(extended)
            mask = np.ones(len(extended), dtype=bool)
            for condition in pending.get(step, ()):
                left, right = condition.relations
                mask &= evaluate_condition(
                    condition,
                    columns[left],
                    extended[:, position[left]],
                    columns[right],
                    extended[:, position[right]],
                )
            pieces.append(extended[mask])
        combos = np.vstack(pieces)
    return combos, checked


def relations_of(conditions: Iterable[ThetaCondition]) -> Set[str]:
    names: Set[str] = set()
    for condition in conditions:
        names.update(condition.relations)
    return names
