"""
Scalar arithmetic expressions for coefficient functions

Coefficients of the G-SDE (b, sigma, h), the functional (f, phi) and implicit domain level sets are written as text in
run configurations. This module parses that text into an immutable tree, evaluates it on numpy arrays of points and
formats it back to text.

Grammar
-------
    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := unary ('^' factor)?
    unary  := '-' unary | atom
    atom   := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

IDENT is a coordinate x1..xN (1-based) or one of the functions in FUNCTIONS.
"""

__author__ = 'gsde developers'

import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = {
    'exp': (1, np.exp),
    'log': (1, np.log),
    'sqrt': (1, np.sqrt),
    'abs': (1, np.abs),
    'sin': (1, np.sin),
    'cos': (1, np.cos),
    'min': (2, np.minimum),
    'max': (2, np.maximum),
}

_TOKEN = re.compile(r'\s*(?:(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)|'
                    r'(?P<op>[-+*/^(),]))')
_VARIABLE = re.compile(r'x([0-9]+)$')

# parser nesting and tree depth caps; evaluation and formatting recurse once per tree level
MAX_NESTING = 100
MAX_DEPTH = 200


class ParseError(ValueError):
    """Positioned parse failure.

    Attributes
    ----------
    kind : str
        one of 'syntax', 'unknown identifier', 'arity', 'variable range'
    offset : int
        byte offset into the source text
    """

    def __init__(self, kind, offset, message):
        self.kind = kind
        self.offset = offset
        super(ParseError, self).__init__('{} error at offset {}: {}'.format(kind, offset, message))


@dataclass(frozen=True)
class Constant(object):
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ValueError('negative constants are expressed as Negate(Constant)')


@dataclass(frozen=True)
class Variable(object):
    index: int


@dataclass(frozen=True)
class Negate(object):
    operand: object


@dataclass(frozen=True)
class Binary(object):
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Call(object):
    name: str
    args: tuple


class Token(object):
    """ Token from the scanner; offset is a byte offset """
    number = 'number'
    ident = 'ident'
    op = 'op'
    eof = 'eof'

    def __init__(self, typ, text, offset):
        self.typ = typ
        self.text = text
        self.offset = offset

    def __repr__(self):
        return '({}, {!r}, {})'.format(self.typ, self.text, self.offset)


def _byte_offset(text, index):
    return len(text[:index].encode('utf-8'))


def tokenize(text):
    tokens = []
    pos = 0
    while True:
        rest = text[pos:]
        if not rest.strip():
            tokens.append(Token(Token.eof, '', _byte_offset(text, len(text))))
            return tokens
        match = _TOKEN.match(text, pos)
        if match is None or match.end() == pos:
            bad = pos + len(rest) - len(rest.lstrip())
            raise ParseError('syntax', _byte_offset(text, bad), 'unexpected character {!r}'.format(text[bad]))
        typ = match.lastgroup
        start = match.start(typ)
        tokens.append(Token(typ, match.group(typ), _byte_offset(text, start)))
        pos = match.end()


class Parser(object):
    """Recursive descent parser over the token list of one expression."""

    def __init__(self, text, max_dim):
        self.text = text
        self.max_dim = max_dim
        self.tokens = tokenize(text)
        self.pos = 0
        self.depth = 0

    @property
    def current(self):
        return self.tokens[self.pos]

    def advance(self):
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def accept(self, op):
        if self.current.typ == Token.op and self.current.text == op:
            return self.advance()
        return None

    def expect(self, op):
        token = self.accept(op)
        if token is None:
            raise ParseError('syntax', self.current.offset, 'expected {!r}, found {}'.format(op, self._describe()))
        return token

    def _enter(self):
        self.depth += 1
        if self.depth > MAX_NESTING:
            raise ParseError('syntax', self.current.offset, 'nesting deeper than {} levels'.format(MAX_NESTING))

    def _describe(self):
        if self.current.typ == Token.eof:
            return 'end of input'
        return repr(self.current.text)

    def parse(self):
        node = self.expr()
        if self.current.typ != Token.eof:
            raise ParseError('syntax', self.current.offset, 'unexpected {}'.format(self._describe()))
        return node

    def expr(self):
        node = self.term()
        while self.current.typ == Token.op and self.current.text in '+-':
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.current.typ == Token.op and self.current.text in '*/':
            op = self.advance().text
            node = Binary(op, node, self.factor())
        return node

    def factor(self):
        base = self.unary()
        if self.accept('^'):
            self._enter()
            try:
                # right-associative
                return Binary('^', base, self.factor())
            finally:
                self.depth -= 1
        return base

    def unary(self):
        self._enter()
        try:
            if self.accept('-'):
                return Negate(self.unary())
            return self.atom()
        finally:
            self.depth -= 1

    def atom(self):
        token = self.current
        if token.typ == Token.number:
            self.advance()
            return Constant(float(token.text))
        if token.typ == Token.ident:
            self.advance()
            if self.accept('('):
                return self._call(token)
            return self._variable(token)
        if self.accept('('):
            node = self.expr()
            self.expect(')')
            return node
        raise ParseError('syntax', token.offset, 'unexpected {}'.format(self._describe()))

    def _call(self, token):
        if token.text not in FUNCTIONS:
            raise ParseError('unknown identifier', token.offset, 'unknown function {!r}'.format(token.text))
        args = [self.expr()]
        while self.accept(','):
            args.append(self.expr())
        self.expect(')')
        arity = FUNCTIONS[token.text][0]
        if len(args) != arity:
            raise ParseError('arity', token.offset, '{} takes {} argument(s), got {}'.format(token.text, arity,
                                                                                          len(args)))
        return Call(token.text, tuple(args))

    def _variable(self, token):
        match = _VARIABLE.match(token.text)
        if match is None:
            if token.text in FUNCTIONS:
                raise ParseError('arity', token.offset, 'function {!r} called without arguments'.format(token.text))
            raise ParseError('unknown identifier', token.offset, 'unknown identifier {!r}'.format(token.text))
        index = int(match.group(1))
        if index < 1 or index > self.max_dim:
            raise ParseError('variable range', token.offset,
                             '{} outside dimension {}'.format(token.text, self.max_dim))
        return Variable(index)


def _children(node):
    if isinstance(node, Negate):
        return (node.operand,)
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, Call):
        return node.args
    return ()


def _walk(node):
    stack = [node]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(_children(node)))


def depth(node):
    """Number of levels in the tree below and including node."""
    deepest, stack = 0, [(node, 1)]
    while stack:
        node, level = stack.pop()
        deepest = max(deepest, level)
        stack.extend((child, level + 1) for child in _children(node))
    return deepest


def _divide(num, den):
    return np.where(np.asarray(den) == 0, np.nan, np.true_divide(num, den))


_BINARY = {
    '+': np.add,
    '-': np.subtract,
    '*': np.multiply,
    '/': _divide,
    '^': np.power,
}


def _compile(node):
    if isinstance(node, Constant):
        value = node.value
        return lambda X: value
    if isinstance(node, Variable):
        i = node.index - 1
        return lambda X: X[..., i]
    if isinstance(node, Negate):
        operand = _compile(node.operand)
        return lambda X: np.negative(operand(X))
    if isinstance(node, Binary):
        left, right, fn = _compile(node.left), _compile(node.right), _BINARY[node.op]
        return lambda X: fn(left(X), right(X))
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name][1]
        args = [_compile(arg) for arg in node.args]
        if len(args) == 1:
            arg = args[0]
            return lambda X: fn(arg(X))
        first, second = args
        return lambda X: fn(first(X), second(X))
    raise TypeError('not an expression node: {!r}'.format(node))


class Expression(object):
    """
    Parsed expression, immutable after construction.

    Attributes
    ----------
    root : node
        Constant, Variable, Negate, Binary or Call
    max_index : int
        largest coordinate index referenced (0 for constants)
    """

    def __init__(self, root, text=None):
        self.root = root
        self.text = text if text is not None else format(self)
        self.max_index = max([n.index for n in _walk(root) if isinstance(n, Variable)] or [0])
        self._fn = _compile(root)

    @property
    def is_constant(self):
        return self.max_index == 0

    def __call__(self, points):
        return evaluate(self, points)

    def __eq__(self, other):
        return isinstance(other, Expression) and self.root == other.root

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(self.root)

    def __repr__(self):
        return 'Expression({!r})'.format(self.text)


def parse(text, max_dim):
    """
    Parse text into an Expression.

    Parameters
    ----------
    text : str
    max_dim : int
        largest admissible coordinate index

    Returns
    -------
    Expression

    Raises
    ------
    ParseError
    """
    if not text or not text.strip():
        raise ParseError('syntax', 0, 'empty expression')
    root = Parser(text, max_dim).parse()
    if depth(root) > MAX_DEPTH:
        raise ParseError('syntax', 0, 'expression deeper than {} levels'.format(MAX_DEPTH))
    return Expression(root, text)


def evaluate(expr, point):
    """
    Evaluate with IEEE semantics; domain errors and division by zero give NaN.

    Parameters
    ----------
    expr : Expression
    point : array-like, shape (n,) or (..., n)

    Returns
    -------
    float for a single point, numpy array of shape (...) for a batch
    """
    point = np.asarray(point, dtype=float)
    if point.ndim == 0:
        point = point.reshape(1)
    if point.shape[-1] < expr.max_index:
        raise ValueError('expression {!r} needs dimension {}, point has {}'.format(expr.text, expr.max_index,
                                                                                 point.shape[-1]))
    with np.errstate(all='ignore'):
        value = expr._fn(point)
    if point.ndim == 1:
        return float(value)
    return np.broadcast_to(np.asarray(value, dtype=float), point.shape[:-1])


def _format_number(value):
    if np.isinf(value):
        return '1e999'
    return repr(float(value))


def _format(node, top=False):
    if isinstance(node, Constant):
        return _format_number(node.value)
    if isinstance(node, Variable):
        return 'x{}'.format(node.index)
    if isinstance(node, Negate):
        inner = node.operand
        if isinstance(inner, Binary):
            return '-({})'.format(_format(inner, top=True))
        return '-' + _format(inner)
    if isinstance(node, Binary):
        text = '{} {} {}'.format(_format(node.left), node.op, _format(node.right))
        return text if top else '(' + text + ')'
    if isinstance(node, Call):
        return '{}({})'.format(node.name, ', '.join(_format(arg, top=True) for arg in node.args))
    raise TypeError('not an expression node: {!r}'.format(node))


def format(expr):
    """
    Text that parses back to a structurally identical tree.

    Parameters
    ----------
    expr : Expression or node
    """
    root = expr.root if isinstance(expr, Expression) else expr
    return _format(root, top=True)
