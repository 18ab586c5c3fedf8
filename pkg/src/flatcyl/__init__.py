"""Maximal flat cylinders of products of special linear groups: censuses, exponents, holonomy statistics."""

__version__ = "0.1.0"
