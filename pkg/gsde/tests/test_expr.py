""" Tests for coefficient expressions """

import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from gsde import expr
from gsde.expr import ParseError


def random_tree(random, levels):
    """Random expression tree over x1, x2 with nonnegative constants."""
    kind = random.randint(5) if levels > 0 else random.randint(2)
    if kind == 0:
        return expr.Constant(float(random.choice([0.5, 1.0, 2.0, 3.25, 1e-3])))
    if kind == 1:
        return expr.Variable(int(random.randint(1, 3)))
    if kind == 2:
        return expr.Negate(random_tree(random, levels - 1))
    if kind == 3:
        return expr.Binary(str(random.choice(list('+-*/^'))), random_tree(random, levels - 1),
                           random_tree(random, levels - 1))
    name = str(random.choice(['exp', 'abs', 'max', 'min', 'sin']))
    arity = expr.FUNCTIONS[name][0]
    return expr.Call(name, tuple(random_tree(random, levels - 1) for _ in range(arity)))


class TestParse(unittest.TestCase):

    def test_precedence(self):
        e = expr.parse('1 + 2 * x1 ^ 2', 1)
        self.assertEqual(e(np.array([3.0])), 19.0)

    def test_power_is_right_associative(self):
        e = expr.parse('2 ^ 3 ^ 2', 1)
        self.assertEqual(e(np.array([0.0])), 512.0)

    def test_unary_minus(self):
        e = expr.parse('-x1 * -2', 1)
        self.assertEqual(e(np.array([1.5])), 3.0)

    def test_functions(self):
        e = expr.parse('exp(x1) + max(x1, x2) - abs(-x2)', 2)
        assert_allclose(e(np.array([0.0, 2.0])), 1.0)

    def test_constant(self):
        e = expr.parse('0.5', 3)
        self.assertTrue(e.is_constant)
        self.assertEqual(e.max_index, 0)
        self.assertEqual(e(np.array([1.0, 2.0, 3.0])), 0.5)

    def test_max_index(self):
        self.assertEqual(expr.parse('x1 + sin(x3)', 3).max_index, 3)

    def test_unknown_identifier(self):
        with self.assertRaises(ParseError) as context:
            expr.parse('1 + y', 1)
        self.assertEqual(context.exception.kind, 'unknown identifier')
        self.assertEqual(context.exception.offset, 4)

    def test_unknown_function(self):
        with self.assertRaises(ParseError) as context:
            expr.parse('tanh(x1)', 1)
        self.assertEqual(context.exception.kind, 'unknown identifier')

    def test_arity(self):
        with self.assertRaises(ParseError) as context:
            expr.parse('max(x1)', 1)
        self.assertEqual(context.exception.kind, 'arity')

    def test_variable_range(self):
        with self.assertRaises(ParseError) as context:
            expr.parse('x1 + x3', 2)
        self.assertEqual(context.exception.kind, 'variable range')
        self.assertEqual(context.exception.offset, 5)
        with self.assertRaises(ParseError):
            expr.parse('x0', 2)

    def test_syntax(self):
        for text in ('', '1 +', '(x1', 'x1 x1', '2 $ 3', ')'):
            with self.assertRaises(ParseError) as context:
                expr.parse(text, 1)
            self.assertEqual(context.exception.kind, 'syntax')

    def test_parse_error_is_value_error(self):
        self.assertRaises(ValueError, expr.parse, '1 +', 1)


class TestEvaluate(unittest.TestCase):

    def test_batch_shape(self):
        e = expr.parse('x1 * x2', 2)
        X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        assert_array_equal(e(X), [2.0, 12.0, 30.0])

    def test_constant_broadcasts_over_batch(self):
        e = expr.parse('2', 1)
        assert_array_equal(e(np.zeros((4, 1))), np.full(4, 2.0))

    def test_division_by_zero_is_nan(self):
        e = expr.parse('1 / x1', 1)
        self.assertTrue(np.isnan(e(np.array([0.0]))))
        self.assertEqual(e(np.array([4.0])), 0.25)

    def test_domain_error_is_nan(self):
        self.assertTrue(np.isnan(expr.parse('log(x1)', 1)(np.array([-1.0]))))
        self.assertTrue(np.isnan(expr.parse('sqrt(x1)', 1)(np.array([-1.0]))))

    def test_short_point(self):
        self.assertRaises(ValueError, expr.evaluate, expr.parse('x2', 2), np.array([1.0]))

    def test_scalar_point(self):
        self.assertEqual(expr.evaluate(expr.parse('x1 + 1', 1), 2.0), 3.0)


class TestFormat(unittest.TestCase):

    def test_reparse_gives_same_tree(self):
        for text in ('1 + 2 * x1 ^ 2', '-(x1 - x2) / 3', '2 ^ 3 ^ x1', '(2 ^ 3) ^ x1', 'min(x1, -x2) * exp(-x1)',
                     '--x1', 'x1 - (x2 - 1)', '1e-3 * x2'):
            e = expr.parse(text, 2)
            again = expr.parse(expr.format(e), 2)
            self.assertEqual(e, again, msg=text)
            self.assertEqual(hash(e), hash(again))

    def test_format_values(self):
        X = np.array([[0.3, -1.7], [2.0, 0.5]])
        e = expr.parse('x1 / (1 + x2 ^ 2) - cos(x1 * x2)', 2)
        assert_allclose(expr.parse(expr.format(e), 2)(X), e(X))

    def test_distinct_trees_differ(self):
        self.assertNotEqual(expr.parse('x1 - x2 - 1', 2), expr.parse('x1 - (x2 - 1)', 2))

    def test_random_trees_round_trip(self):
        random = np.random.RandomState(17)
        X = random.uniform(0.5, 1.5, size=(8, 2))
        for _ in range(300):
            root = random_tree(random, 4)
            e = expr.Expression(root)
            again = expr.parse(expr.format(e), 2)
            self.assertEqual(again.root, root, msg=expr.format(e))
            assert_allclose(again(X), e(X), equal_nan=True)


class TestTotality(unittest.TestCase):

    def assertRejected(self, text):
        with self.assertRaises(ParseError) as context:
            expr.parse(text, 2)
        self.assertEqual(context.exception.kind, 'syntax')

    def test_deep_parentheses(self):
        self.assertRejected('(' * 5000 + 'x1' + ')' * 5000)
        self.assertRejected('(' * 5000)

    def test_long_unary_chain(self):
        self.assertRejected('-' * 5000 + 'x1')

    def test_long_power_chain(self):
        self.assertRejected(' ^ '.join(['x1'] * 5000))

    def test_long_sum_is_too_deep(self):
        self.assertRejected(' + '.join(['x1'] * 5000))

    def test_moderate_nesting_parses(self):
        e = expr.parse('(' * 60 + 'x1 + 1' + ')' * 60, 1)
        self.assertEqual(e(np.array([2.0])), 3.0)
        e = expr.parse(' + '.join(['x1'] * 150), 1)
        self.assertEqual(e(np.array([1.0])), 150.0)
        self.assertEqual(expr.depth(e.root), 150)

    def test_random_token_soup(self):
        pieces = ['x1', 'x2', 'x3', '2', '0.5', '1e3', 'exp', 'max', 'foo', '+', '-', '*', '/', '^', '(', ')', ',',
                  ' ', '$', '.', '1e']
        random = np.random.RandomState(3)
        for _ in range(2000):
            text = ''.join(random.choice(pieces, size=random.randint(0, 25)))
            try:
                expr.parse(text, 2)
            except ParseError as e:
                self.assertIn(e.kind, ('syntax', 'unknown identifier', 'arity', 'variable range'))
                self.assertGreaterEqual(e.offset, 0)
                self.assertLessEqual(e.offset, len(text.encode('utf-8')))

    def test_random_nesting(self):
        random = np.random.RandomState(5)
        for _ in range(50):
            n = random.randint(1, 3000)
            text = ''.join(random.choice(['(', '-', 'x1 ^ ', 'exp('], size=n)) + 'x1'
            try:
                expr.parse(text, 1)
            except ParseError:
                pass


if __name__ == '__main__':
    unittest.main()
