"""Test package."""


