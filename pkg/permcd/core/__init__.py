"""Core plumbing: value types, errors, configuration, logging, test registry"""
