"""Tests package"""



