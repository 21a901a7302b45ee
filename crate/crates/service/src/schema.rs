use serde_json::{json, Value};

fn schema_ref(name: &str) -> Value {
    json!({ "$ref": format!("#/components/schemas/{name}") })
}

fn json_content(name: &str) -> Value {
    json!({ "application/json": { "schema": schema_ref(name) } })
}

fn error_response(description: &str) -> Value {
    json!({ "description": description, "content": json_content("Error") })
}

fn png_response(description: &str) -> Value {
    json!({
        "description": description,
        "content": { "image/png": { "schema": { "type": "string", "format": "binary" } } }
    })
}

fn id_param() -> Value {
    json!({ "name": "id", "in": "path", "required": true, "schema": { "type": "integer", "minimum": 1 } })
}

fn query_param(name: &str, description: &str, schema: Value) -> Value {
    json!({ "name": name, "in": "query", "required": false, "description": description, "schema": schema })
}

fn components() -> Value {
    let nullable = |s: Value| json!({ "oneOf": [s, { "type": "null" }] });
    json!({
        "Error": {
            "type": "object",
            "required": ["error"],
            "properties": { "error": { "type": "string" } }
        },
        "GeoPoint": {
            "type": "object",
            "required": ["lat", "lon"],
            "properties": {
                "lat": { "type": "number", "minimum": -90, "maximum": 90 },
                "lon": { "type": "number", "minimum": -180, "maximum": 180 }
            }
        },
        "TileIndex": {
            "type": "object",
            "required": ["col", "row"],
            "properties": { "col": { "type": "integer" }, "row": { "type": "integer" } }
        },
        "Detection": {
            "type": "object",
            "required": ["id", "member_tiles", "centroid", "max_probability", "mean_probability", "peak_tile"],
            "properties": {
                "id": { "type": "integer", "minimum": 1 },
                "member_tiles": { "type": "array", "minItems": 1, "items": schema_ref("TileIndex") },
                "centroid": schema_ref("GeoPoint"),
                "max_probability": { "type": "number", "minimum": 0, "maximum": 1 },
                "mean_probability": { "type": "number", "minimum": 0, "maximum": 1 },
                "peak_tile": schema_ref("TileIndex")
            }
        },
        "ReviewStatus": { "type": "string", "enum": ["pending", "confirmed", "rejected"] },
        "ReviewedType": { "type": "string", "enum": ["oil_refinery", "crude_oil_terminal", "lng_terminal"] },
        "FacilityType": { "type": "string", "enum": ["oil_refinery", "petroleum_terminal"] },
        "ReviewedDetection": {
            "type": "object",
            "required": ["detection", "status", "facility_type", "tank_count", "reviewer", "reviewed_at"],
            "properties": {
                "detection": schema_ref("Detection"),
                "status": schema_ref("ReviewStatus"),
                "facility_type": nullable(schema_ref("ReviewedType")),
                "tank_count": nullable(json!({ "type": "integer", "minimum": 0 })),
                "reviewer": nullable(json!({ "type": "string" })),
                "reviewed_at": nullable(json!({ "type": "string", "format": "date-time" }))
            }
        },
        "DetectionPage": {
            "type": "object",
            "required": ["total", "page", "page_size", "items"],
            "properties": {
                "total": { "type": "integer", "minimum": 0 },
                "page": { "type": "integer", "minimum": 1 },
                "page_size": { "type": "integer", "minimum": 1 },
                "items": { "type": "array", "items": schema_ref("ReviewedDetection") }
            }
        },
        "ReviewRequest": {
            "type": "object",
            "required": ["action"],
            "properties": {
                "action": { "type": "string", "enum": ["classify", "reject", "reopen"] },
                "facility_type": schema_ref("ReviewedType"),
                "tank_count": { "type": "integer", "minimum": 0 },
                "reviewer": { "type": "string" },
                "timestamp": { "type": "string", "format": "date-time" }
            }
        },
        "Table1Row": {
            "type": "object",
            "required": ["facility_type", "total_detections", "benchmark_total", "covered", "coverage_percent", "new_detections"],
            "properties": {
                "facility_type": schema_ref("FacilityType"),
                "total_detections": { "type": "integer", "minimum": 0 },
                "benchmark_total": { "type": "integer", "minimum": 0 },
                "covered": { "type": "integer", "minimum": 0 },
                "coverage_percent": { "type": "number", "minimum": 0, "maximum": 100 },
                "new_detections": { "type": "integer", "minimum": 0 }
            }
        },
        "Table1Report": {
            "type": "object",
            "required": ["rows"],
            "properties": {
                "rows": { "type": "array", "minItems": 2, "maxItems": 2, "items": schema_ref("Table1Row") }
            }
        }
    })
}

/// The API description served at `/openapi.json` and shipped as `docs/openapi.json`.
pub fn openapi_document() -> Value {
    json!({
        "openapi": "3.1.0",
        "info": {
            "title": "tilescan review API",
            "version": env!("CARGO_PKG_VERSION")
        },
        "paths": {
            "/detections": {
                "get": {
                    "summary": "List detections ordered by id, filtered and paged",
                    "parameters": [
                        query_param("status", "Review status", schema_ref("ReviewStatus")),
                        query_param("type", "Rolled-up facility type of confirmed rows", schema_ref("FacilityType")),
                        query_param("bbox", "min_lat,min_lon,max_lat,max_lon; matches on centroid", json!({ "type": "string" })),
                        query_param("page", "1-based page number", json!({ "type": "integer", "minimum": 1, "default": 1 })),
                        query_param("page_size", "Rows per page, capped at 1000", json!({ "type": "integer", "minimum": 1, "maximum": 1000, "default": 100 }))
                    ],
                    "responses": {
                        "200": { "description": "One page of detections", "content": json_content("DetectionPage") },
                        "400": error_response("Malformed filter")
                    }
                }
            },
            "/detections/{id}": {
                "get": {
                    "summary": "One detection with its review state",
                    "parameters": [id_param()],
                    "responses": {
                        "200": { "description": "The detection", "content": json_content("ReviewedDetection") },
                        "404": error_response("Unknown detection")
                    }
                }
            },
            "/detections/{id}/image": {
                "get": {
                    "summary": "RGB image of the detection's highest-probability tile",
                    "parameters": [id_param()],
                    "responses": {
                        "200": png_response("500x500 RGB PNG"),
                        "404": error_response("Unknown detection or missing tile"),
                        "409": error_response("No imagery configured")
                    }
                }
            },
            "/detections/{id}/cam": {
                "get": {
                    "summary": "Normalized class activation map of a member tile",
                    "parameters": [id_param()],
                    "responses": {
                        "200": png_response("500x500 grayscale PNG"),
                        "404": error_response("Unknown detection"),
                        "409": error_response("No feature maps available")
                    }
                }
            },
            "/detections/{id}/review": {
                "post": {
                    "summary": "Apply a review action; durable before the response",
                    "parameters": [id_param()],
                    "requestBody": { "required": true, "content": json_content("ReviewRequest") },
                    "responses": {
                        "200": { "description": "The updated detection", "content": json_content("ReviewedDetection") },
                        "404": error_response("Unknown detection"),
                        "422": error_response("Illegal transition or invalid payload")
                    }
                }
            },
            "/reports/table1": {
                "get": {
                    "summary": "Detection statistics against the benchmark datasets",
                    "responses": {
                        "200": { "description": "Per-type statistics", "content": json_content("Table1Report") },
                        "409": error_response("Benchmark datasets not loaded")
                    }
                }
            },
            "/exports/verified.geojson": {
                "get": {
                    "summary": "Confirmed facilities as GeoJSON points",
                    "responses": {
                        "200": {
                            "description": "FeatureCollection",
                            "content": { "application/geo+json": { "schema": { "type": "object" } } }
                        }
                    }
                }
            },
            "/openapi.json": {
                "get": {
                    "summary": "This document",
                    "responses": { "200": { "description": "OpenAPI document" } }
                }
            }
        },
        "components": { "schemas": components() }
    })
}
